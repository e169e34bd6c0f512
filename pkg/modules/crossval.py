from mixturedetect.evaluation import two_fold_evaluation, write_metrics_csv
from mixturedetect.synthdata import read_dataset


class CrossValCommand:
    name = 'crossval'
    help = 'two-fold evaluation: train on each half, test on the other'

    def __init__(self, cli):
        self.cli = cli
        self.report = cli.get_service('ReportService')

    def register(self, parser):
        parser.add_argument('dataset_dir')

    def run(self, args, config):
        report = two_fold_evaluation(read_dataset(args.dataset_dir), config, progress=True)
        if config.out:
            write_metrics_csv([report], config.out)
        print(self.report.metrics('Two-fold evaluation', [report],
                                  footer=f'TP={report.tp} FP={report.fp} FN={report.fn}'))


def setup(cli):
    cli.add_command(CrossValCommand(cli))
