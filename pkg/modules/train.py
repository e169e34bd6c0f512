from pathlib import Path

from mixturedetect import checkpoint
from mixturedetect.evaluation import train_on
from mixturedetect.mderror import ConfigurationError
from mixturedetect.network import write_loss_curve
from mixturedetect.synthdata import read_dataset


class TrainCommand:
    name = 'train'
    help = "train a network on a dataset's train split"

    def __init__(self, cli):
        self.cli = cli
        self.report = cli.get_service('ReportService')

    def register(self, parser):
        parser.add_argument('dataset_dir')

    def run(self, args, config):
        out = Path(config.out or 'model.mdnc')
        images = read_dataset(args.dataset_dir, split='train')
        if not images:
            raise ConfigurationError(args.dataset_dir, 'dataset has no train images')

        print(f'training on {len(images)} images '
              f'(K={config.network.K}, {config.network.epochs} epochs)...')
        ckpt, losses = train_on(images, config, progress=True)

        out.parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save(ckpt, out)
        loss_csv = out.with_name(out.stem + '.loss.csv')
        write_loss_curve(losses, loss_csv)

        final = f'{losses[-1]:.4f}' if losses else 'n/a'
        print(self.report.generate(
            title='Training finished',
            description=f'\tCheckpoint: {out}\n\tLoss curve: {loss_csv}\n\tFinal loss: {final}'))


def setup(cli):
    cli.add_command(TrainCommand(cli))
