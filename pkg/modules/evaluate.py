from mixturedetect.evaluation import match, metrics, write_metrics_csv
from mixturedetect.pipeline import load_detections_csv
from mixturedetect.synthdata import read_centers_csv


class EvalCommand:
    name = 'eval'
    help = 'score a detections CSV against a ground-truth CSV'

    def __init__(self, cli):
        self.cli = cli
        self.report = cli.get_service('ReportService')

    def register(self, parser):
        parser.add_argument('detections_csv')
        parser.add_argument('gt_csv')

    def run(self, args, config):
        detections = load_detections_csv(args.detections_csv)
        gts = read_centers_csv(args.gt_csv)

        result = match(detections, gts, config.radius, config.match_method)
        report = metrics({args.detections_csv: result})
        if config.out:
            write_metrics_csv([report], config.out)

        print(self.report.metrics(
            f'Evaluation (radius {config.radius:g} px)', [report],
            footer=f'TP={report.tp} FP={report.fp} FN={report.fn}'))


def setup(cli):
    cli.add_command(EvalCommand(cli))
