"""
Command-line plumbing shared by the speq management commands.

`run(argv)` is what manage.py calls; it returns the process exit code:
0 on success, 1 on usage/config/numeric errors, 2 when a harness check fails.
Every failure prints one line, `CommandError: <reason>`, on stderr.
"""
import logging
from pathlib import Path

from django.core.management import execute_from_command_line
from django.core.management.base import BaseCommand, CommandError
from dotenv import dotenv_values
from rest_framework import serializers

from equiv_app.errors import CheckFailedError, ConfigError, SpeqError
from equiv_app.serializers import config_key
from equiv_app.utils import ensure_output_dir, render_json, resolve_threads, write_csv

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2


def run(argv):
    """Dispatch to a management command and turn SystemExit into an exit code."""
    try:
        execute_from_command_line(list(argv))
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    return 0


def load_config_file(path):
    """
    Flat key=value config file (dotenv syntax). Dotted or dashed keys map to
    underscored option names.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {config_key(key): value for key, value in values.items() if value is not None}


def _flatten_errors(detail, prefix=''):
    if isinstance(detail, dict):
        parts = []
        for key, value in detail.items():
            label = '' if key == 'non_field_errors' else f"{key}: "
            parts.append(_flatten_errors(value, prefix + label))
        return '; '.join(parts)
    if isinstance(detail, (list, tuple)):
        return '; '.join(_flatten_errors(item, prefix) for item in detail)
    return f"{prefix}{detail}"


def _one_line(message):
    return ' '.join(str(message).split())


def write_gnuplot(directory, csv_name, x_column, y_columns, title, logscale=False):
    """Write plot.gp next to a CSV so `gnuplot plot.gp` renders it to plot.png."""
    lines = [
        'set datafile separator ","',
        'set key autotitle columnhead',
        'set terminal pngcairo size 900,600',
        "set output 'plot.png'",
        f"set title '{title}'",
    ]
    if logscale:
        lines.append('set logscale xy')
    plots = [f"'{csv_name}' using '{x_column}':'{column}' with linespoints" for column in y_columns]
    lines.append('plot ' + ', \\\n     '.join(plots))
    path = Path(directory) / 'plot.gp'
    path.write_text('\n'.join(lines) + '\n')
    return path


class SpeqCommand(BaseCommand):
    """
    Base for speq subcommands.

    Subclasses declare `serializer_class`, add their flags in
    `add_command_arguments` and do the work in `run_command(params)`, which
    returns the text for stdout.
    """
    serializer_class = None

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, help='Master seed (SPEQ_SEED by default)')
        parser.add_argument('--output-dir', dest='output_dir', help='Directory for CSV/JSON artifacts')
        parser.add_argument('--threads', type=int, help='Worker threads (SPEQ_THREADS by default)')
        parser.add_argument('--config', help='key=value config file; its values override flags')
        parser.add_argument('--gnuplot', action='store_true', default=None, help='Also write a gnuplot script')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_params(self, options):
        serializer_class = self.serializer_class
        data = {
            key: value for key, value in options.items()
            if key in serializer_class().fields and value is not None
        }
        if options.get('config'):
            data.update(load_config_file(options['config']))
        serializer = serializer_class(data=data)
        serializer.is_valid(raise_exception=True)
        params = dict(serializer.validated_data)
        params['threads'] = resolve_threads(params.get('threads'))
        return params

    def output_dir(self, params):
        return ensure_output_dir(params['output_dir'])

    def write_rows(self, params, name, columns):
        path = self.output_dir(params) / name
        write_csv(path, columns)
        logger.info(f"Wrote {path}")
        return path

    def render(self, data):
        return render_json(data).decode('utf-8')

    def handle(self, *args, **options):
        try:
            params = self.load_params(options)
            return self.run_command(params)
        except serializers.ValidationError as e:
            raise CommandError(_one_line(f"invalid configuration: {_flatten_errors(e.detail)}"),
                               returncode=EXIT_USAGE)
        except CheckFailedError as e:
            raise CommandError(_one_line(f"check failed: {e}"), returncode=EXIT_CHECK_FAILED)
        except SpeqError as e:
            raise CommandError(_one_line(e), returncode=EXIT_USAGE)

    def run_command(self, params):
        raise NotImplementedError
