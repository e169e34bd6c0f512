from pathlib import Path

from mixturedetect.mderror import UsageError
from mixturedetect.synthdata import synthesize_dataset, write_dataset


class SynthCommand:
    name = 'synth'
    help = 'write a synthetic annotated dataset'

    def __init__(self, cli):
        self.cli = cli
        self.report = cli.get_service('ReportService')

    def register(self, parser):
        pass

    def run(self, args, config):
        if config.images < 1:
            raise UsageError('--images', f'must be >= 1, got {config.images}')
        out_dir = Path(config.out or 'dataset')

        images = synthesize_dataset(config.scene, config.images, progress=True)
        manifest = write_dataset(images, out_dir)

        n_train = sum(image.split == 'train' for image in images)
        n_centers = sum(len(image.centers) for image in images)
        print(self.report.generate(
            title='Synthetic dataset',
            description=f'\tImages:  {len(images)} ({n_train} train, {len(images) - n_train} test)\n'
                        f'\tCenters: {n_centers}\n'
                        f'\tSize:    {config.scene.image_size}x{config.scene.image_size}',
            footer=f'manifest: {manifest}'))


def setup(cli):
    cli.add_command(SynthCommand(cli))
