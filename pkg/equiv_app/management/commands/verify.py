from equiv_app.cli import SpeqCommand, write_gnuplot
from equiv_app.errors import CheckFailedError
from equiv_app.serializers import VerifySerializer
from equiv_app.verify_service import (
    SweepConfig, corollary_bounds, intermediate_parameter_sweep, mean_resolvent_gap,
    rows_to_columns, stieltjes_variance_sweep,
)

GAP_SLOPE = (-0.8, -0.3)
VARIANCE_SLOPE = (-2.6, -1.4)
HIERARCHY_FRACTION = 0.9


class Command(SpeqCommand):
    help = 'Monte Carlo sweep of the resolvent bounds; writes verify.csv and exits 2 if a check fails'
    serializer_class = VerifySerializer

    def add_command_arguments(self, parser):
        parser.add_argument('--preset', help='gaussian-mp or rademacher-mp')
        parser.add_argument('--nmin', type=int, help='Smallest n (default 64)')
        parser.add_argument('--nmax', type=int, help='Largest n (default 512)')
        parser.add_argument('--replicas', type=int, help='Replicas per n (default 32)')
        parser.add_argument('--gamma', type=float, help='gamma = p/n (default 0.5)')
        parser.add_argument('--sigma', help='Population spec (default identity)')
        parser.add_argument('--z', help='Spectral parameter (default -1)')

    def run_command(self, params):
        sweep = SweepConfig(
            gamma=params['gamma'],
            n_values=params['n_values'],
            replicas=params['replicas'],
            seed=params['seed'],
            kind=params['kind'],
            sigma_spec=params['sigma'],
        )
        z, threads = params['z'], params['threads']
        gap = mean_resolvent_gap(sweep, z, threads)
        variance = stieltjes_variance_sweep(sweep, z, threads)
        intermediate = intermediate_parameter_sweep(sweep, z, threads)
        corollary = corollary_bounds(sweep.run_config(sweep.n_values[-1]), z, threads=threads)
        a_in_omega = float(intermediate.values('a_in_omega').min())

        rows = gap.rows + variance.rows + intermediate.rows
        self.write_rows(params, 'verify.csv', rows_to_columns(rows))
        if params['gnuplot']:
            write_gnuplot(self.output_dir(params), 'verify.csv', 'n', ['value', 'bound'],
                          'resolvent gap against n', logscale=True)

        checks = {
            'gap_slope': (gap.slope, gap.slope_within(*GAP_SLOPE)),
            'variance_slope': (variance.slope, variance.slope_within(*VARIANCE_SLOPE)),
            'a_in_omega': (a_in_omega, a_in_omega == 1.0),
            'hierarchy_fraction': (corollary.hierarchy_fraction, corollary.hierarchy_fraction >= HIERARCHY_FRACTION),
        }
        summary = {
            'preset': params['preset'],
            'n_values': list(sweep.n_values),
            'gap_slope': gap.slope,
            'gap_slope_halfwidth': gap.fit.halfwidth,
            'variance_slope': variance.slope,
            'b_slope': intermediate.slope,
            'a_in_omega': a_in_omega,
            'hierarchy_fraction': corollary.hierarchy_fraction,
            'passed': all(ok for _, ok in checks.values()),
        }
        failed = [f"{name}={value:.4g}" for name, (value, ok) in checks.items() if not ok]
        if failed:
            self.stdout.write(self.render(summary))
            raise CheckFailedError(', '.join(failed))
        return self.render(summary)
