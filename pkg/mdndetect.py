"""
mdndetect command line

    synth     write a synthetic dataset (PNG + CSV + manifest)
    train     train a network on a dataset's train split
    detect    detect points in one image
    eval      score a detections CSV against a ground-truth CSV
    sparse    full vs. sparse annotation experiment
    crossval  two-fold train/test evaluation

Exit codes: 0 success, 1 usage/config error (an infeasible scene or an
out-of-domain value is a config error), 2 I/O or format error, 3 numeric
failure. Set MDN_LOG to DEBUG/INFO/WARNING/ERROR for logging.
"""


import argparse
import importlib
import logging
import os
import sys

from mixturedetect.mderror import (ConfigurationError, DomainError, FormatError,
                                   GenerationError, NumericError, UsageError)
from mixturedetect.runconfig import build_run_config, read_config_file


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(self.prog, message)


class CommandLine:
    """Holds the subcommands and shared services loaded from the modules list."""

    def __init__(self):
        self.parser = ArgumentParser(prog='mdndetect',
                                     description='Mixture density network point detection')
        self.subparsers = self.parser.add_subparsers(dest='command_name', required=True)
        self.common = self._common_flags()
        self.commands = {}
        self.services = {}

    @staticmethod
    def _common_flags():
        common = ArgumentParser(add_help=False)
        common.add_argument('--config', help='key=value (or .json) config file')
        common.add_argument('--seed', type=int)
        common.add_argument('--out')
        common.add_argument('--stride', type=int)
        common.add_argument('--k', type=int, help='mixture components')
        common.add_argument('--epochs', type=int)
        common.add_argument('--e-thresh', dest='e_thresh', type=float)
        common.add_argument('--alpha-thresh', dest='alpha_thresh', type=float)
        common.add_argument('--radius', type=float)
        common.add_argument('--drop', type=float)
        common.add_argument('--workers', type=int)
        common.add_argument('--images', type=int)
        return common

    def load_extension(self, name):
        importlib.import_module(name).setup(self)

    def add_command(self, command):
        self.commands[command.name] = command
        parser = self.subparsers.add_parser(command.name, help=command.help,
                                            parents=[self.common])
        command.register(parser)

    def add_service(self, service):
        self.services[type(service).__name__] = service

    def get_service(self, name):
        return self.services.get(name)

    def build_config(self, args):
        values = read_config_file(args.config) if args.config else {}
        overrides = {key: getattr(args, key)
                     for key in ('seed', 'stride', 'k', 'epochs', 'e_thresh', 'alpha_thresh',
                                 'radius', 'drop', 'workers', 'images', 'out')}
        return build_run_config(values, overrides)

    def run(self, argv=None):
        try:
            args = self.parser.parse_args(argv)
            command = self.commands[args.command_name]
            config = self.build_config(args)
            command.run(args, config)
        except (ConfigurationError, DomainError, GenerationError) as ex:
            print(f'error: {ex}', file=sys.stderr)
            return 1
        except FormatError as ex:
            print(f'error: {ex}', file=sys.stderr)
            return 2
        except OSError as ex:
            print(f'error: {ex}', file=sys.stderr)
            return 2
        except NumericError as ex:
            print(f'error: {ex}', file=sys.stderr)
            return 3
        return 0


# Load modules
extensions = [
    'modules.utils.report',
    'modules.synth',
    'modules.train',
    'modules.detect',
    'modules.evaluate',
    'modules.sparse',
    'modules.crossval',
]


def main(argv=None):
    level = os.environ.get('MDN_LOG', 'WARNING').upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')

    cli = CommandLine()
    for extension in extensions:
        cli.load_extension(extension)
    return cli.run(argv)


if __name__ == '__main__':
    sys.exit(main())
