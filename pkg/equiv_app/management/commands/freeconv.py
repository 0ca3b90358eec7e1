import numpy as np

from equiv_app.cli import SpeqCommand, write_gnuplot
from equiv_app.equiv_service import CovarianceModel
from equiv_app.errors import CheckFailedError
from equiv_app.freeconv_service import free_multiplicative_mp, stieltjes_check
from equiv_app.serializers import FreeconvSerializer

STIELTJES_CHECK_TOL = 2e-3


class Command(SpeqCommand):
    help = 'Density and CDF of MP(gamma) boxtimes mu_Sigma, written as density.csv and cdf.csv'
    serializer_class = FreeconvSerializer

    def add_command_arguments(self, parser):
        parser.add_argument('--gamma', type=float, help='gamma = p/n')
        parser.add_argument('--sigma', help='Population spec')
        parser.add_argument('--p', type=int, help='Dimension p used to resolve the sigma spec')
        parser.add_argument('--grid', type=int, help='Grid size (SPEQ_FREECONV_GRID by default)')
        parser.add_argument('--eps', help='Descending inversion heights, comma separated')
        parser.add_argument('--stieltjes-check', dest='stieltjes_check', action='store_true', default=None,
                            help='Compare the transform of the result with g_nu at held-out z')

    def run_command(self, params):
        model = CovarianceModel(params['sigma_eigenvalues'], params['gamma'])
        result = free_multiplicative_mp(model, grid_size=params.get('grid'),
                                        epsilon_schedule=params.get('eps'), threads=params['threads'])
        directory = self.output_dir(params)
        result.density.to_csv(directory / 'density.csv')
        result.cdf.to_csv(directory / 'cdf.csv', grid=result.density.grid)
        if params['gnuplot']:
            write_gnuplot(directory, 'density.csv', 'x', ['f'], f"MP({model.gamma:g}) free convolution density")

        summary = {
            'gamma': model.gamma,
            'atom_at_zero': result.atom_at_zero,
            'total_mass': float(result.total_mass),
            'support_lo': result.support[0],
            'support_hi': result.support[1],
            'clamp': result.clamp_magnitude,
            'grid_points': int(np.asarray(result.density.grid).size),
        }
        if params['stieltjes_check']:
            error = stieltjes_check(result, model)
            summary['stieltjes_error'] = error
            if error > STIELTJES_CHECK_TOL:
                raise CheckFailedError(f"Stieltjes round trip error {error:.3e} exceeds {STIELTJES_CHECK_TOL}")
        return self.render(summary)
