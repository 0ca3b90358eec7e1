from equiv_app.cli import SpeqCommand
from equiv_app.measures import empirical_spectrum
from equiv_app.resolvents import sample_covariance
from equiv_app.serializers import SimulateSerializer
from equiv_app.simulation_service import (
    ColumnDistribution, LipschitzMap, RunConfig, dump_matrix, sample_matrix,
)
from equiv_app.utils import run_parallel


class Command(SpeqCommand):
    help = 'Draw replicas of X and write the spectrum of K = XX\'/n as spectrum_<replica>.csv'
    serializer_class = SimulateSerializer

    def add_command_arguments(self, parser):
        parser.add_argument('--p', type=int, help='Dimension p')
        parser.add_argument('--n', type=int, help='Sample count n')
        parser.add_argument('--sigma', help='Population spec')
        parser.add_argument('--kind', dest='dist_kind', help='gaussian, rademacher or lipschitz')
        parser.add_argument('--map', dest='lipschitz_map', help='Lipschitz map for the lipschitz kind')
        parser.add_argument('--mean', dest='dist_mean', help='Column mean as a comma list or a CSV file')
        parser.add_argument('--mean-norm', dest='dist_mean_norm', type=float,
                            help='Declared bound on the norm of the mean (default 0)')
        parser.add_argument('--replicas', type=int, help='Number of replicas')
        parser.add_argument('--dump-matrix', dest='dump_matrix', action='store_true', default=None,
                            help='Also write matrix_<replica>.speqmat')

    def run_command(self, params):
        distribution = ColumnDistribution(
            kind=params['dist_kind'],
            sigma_eigenvalues=params['sigma_eigenvalues'],
            mean=params['dist_mean'],
            mean_norm=params['dist_mean_norm'],
            lipschitz_map=LipschitzMap(params['lipschitz_map']),
        )
        config = RunConfig(p=params['p'], n=params['n'], distribution=distribution,
                           seed=params['seed'], replicas=params['replicas'])
        directory = self.output_dir(params)

        def _replica(replica):
            X = sample_matrix(config, replica)
            spectrum = empirical_spectrum(sample_covariance(X))
            spectrum.to_csv(directory / f"spectrum_{replica}.csv")
            if params['dump_matrix']:
                dump_matrix(X, directory / f"matrix_{replica}.speqmat")
            return spectrum.mean()

        means = run_parallel(_replica, range(config.replicas), params['threads'])
        return self.render({
            'p': config.p,
            'n': config.n,
            'gamma': config.gamma,
            'kind': distribution.kind.value,
            'mean_norm': distribution.mean_norm,
            'replicas': config.replicas,
            'spectrum_means': means,
        })
