from equiv_app.cli import SpeqCommand, write_gnuplot
from equiv_app.errors import CheckFailedError
from equiv_app.serializers import KolmogorovSerializer
from equiv_app.simulation_service import ColumnKind
from equiv_app.verify_service import StatRow, SweepConfig, kolmogorov_universality, rows_to_columns


class Command(SpeqCommand):
    help = 'Kolmogorov distance between the ESD and MP(gamma) boxtimes mu_Sigma across n; writes kolmogorov.csv'
    serializer_class = KolmogorovSerializer

    def add_command_arguments(self, parser):
        parser.add_argument('--gamma', type=float, help='gamma = p/n (default 0.5)')
        parser.add_argument('--sigma', help='Population spec (default identity)')
        parser.add_argument('--nmin', type=int, help='Smallest n (default 128)')
        parser.add_argument('--nmax', type=int, help='Largest n (default 1024)')
        parser.add_argument('--replicas', type=int, help='Replicas per n (default 8)')
        parser.add_argument('--grid', type=int, help='Free-convolution grid size')

    def run_command(self, params):
        sweep = SweepConfig(
            gamma=params['gamma'],
            n_values=params['n_values'],
            replicas=params['replicas'],
            seed=params['seed'],
            kind=ColumnKind.GAUSSIAN_LINEAR,
            sigma_spec=params['sigma'],
        )
        study = kolmogorov_universality(sweep, params['threads'], params.get('grid'))
        gaussian, rademacher = study['gaussian'], study['rademacher']

        rows = []
        for label, report in (('gaussian', gaussian), ('rademacher', rademacher)):
            rows.extend(StatRow(f"kolmogorov_{label}", row.n, row.value, row.stderr, row.bound)
                        for row in report.sweep.rows)
        self.write_rows(params, 'kolmogorov.csv', rows_to_columns(rows))
        if params['gnuplot']:
            write_gnuplot(self.output_dir(params), 'kolmogorov.csv', 'n', ['value'],
                          'Kolmogorov distance against n', logscale=True)

        summary = {
            'n_values': list(sweep.n_values),
            'gaussian': [point.mean for point in gaussian.points],
            'rademacher': [point.mean for point in rademacher.points],
            'ratios': study['ratios'],
            'reduction_residual': gaussian.reduction_residual,
            'decays': gaussian.decays,
            'threshold_ok': gaussian.threshold_ok,
            'universal': study['within'],
        }
        failed = [name for name in ('decays', 'threshold_ok', 'universal') if not summary[name]]
        if failed:
            self.stdout.write(self.render(summary))
            raise CheckFailedError(f"Kolmogorov study: {', '.join(failed)} did not hold")
        return self.render(summary)
