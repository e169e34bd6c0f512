from pathlib import Path

from mixturedetect import checkpoint
from mixturedetect.pipeline import (detect, export_gate_scores, save_detections_csv,
                                    save_overlay, save_probmap_png)
from mixturedetect.synthdata import read_centers_csv, read_image


class DetectCommand:
    name = 'detect'
    help = 'detect points in one image'

    def __init__(self, cli):
        self.cli = cli
        self.report = cli.get_service('ReportService')

    def register(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('image')
        parser.add_argument('--gt', help='ground-truth CSV; also writes an overlay PNG')

    def run(self, args, config):
        ckpt = checkpoint.load(args.checkpoint)
        image = read_image(args.image)
        prefix = config.out or str(Path(args.image).with_suffix(''))
        Path(prefix).parent.mkdir(parents=True, exist_ok=True)

        found = detect(image, ckpt, config.pipeline)

        save_detections_csv(found, f'{prefix}.detections.csv')
        save_probmap_png(found.probmap, f'{prefix}.probmap.png')
        export_gate_scores(found.predictions, f'{prefix}.gates.csv')
        if args.gt:
            save_overlay(image, found, read_centers_csv(args.gt), f'{prefix}.overlay.png',
                         config.radius)

        kept = sum(p.gate_e >= config.pipeline.e_thresh for _, p in found.predictions)
        print(self.report.generate(
            title=f'Detections for {args.image}',
            description=f'\tDetections: {len(found)}\n'
                        f'\tPatches:    {len(found.predictions)} ({kept} above the gate)',
            footer=f'written to {prefix}.*'))


def setup(cli):
    cli.add_command(DetectCommand(cli))
