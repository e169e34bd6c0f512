from mixturedetect.evaluation import sparse_experiment, write_metrics_csv
from mixturedetect.synthdata import read_dataset


class SparseCommand:
    name = 'sparse'
    help = 'compare training on full and on sparsified annotations'

    def __init__(self, cli):
        self.cli = cli
        self.report = cli.get_service('ReportService')

    def register(self, parser):
        parser.add_argument('dataset_dir')

    def run(self, args, config):
        dataset = read_dataset(args.dataset_dir)
        print(f'training twice on {sum(i.split == "train" for i in dataset)} images, '
              f'dropping {config.drop:.0%} of the annotations the second time...')

        paired = sparse_experiment(dataset, config.drop, config, progress=True)
        reports = [paired.full, paired.sparse]
        if config.out:
            write_metrics_csv(reports, config.out)

        delta = paired.delta
        print(self.report.metrics(
            'Full vs. sparse annotations', reports,
            footer=f'delta: P {delta["precision"]:+.3f}  R {delta["recall"]:+.3f}  '
                   f'F1 {delta["f1"]:+.3f}'))


def setup(cli):
    cli.add_command(SparseCommand(cli))
