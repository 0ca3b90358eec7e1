import numpy as np

from equiv_app.cli import SpeqCommand
from equiv_app.errors import CheckFailedError, ConfigError
from equiv_app.ridge_service import KernelProblem, debias_experiment, effective_ridge, rbf_kernel_problem
from equiv_app.serializers import RidgeReportSerializer, RidgeSerializer
from equiv_app.utils import read_matrix


class Command(SpeqCommand):
    help = 'Effective ridge lambda_tilde and the random-features debias experiment; JSON report'
    serializer_class = RidgeSerializer

    def add_command_arguments(self, parser):
        parser.add_argument('--kernel', help='CSV: kernel eigenvalues (one column) or a square kernel matrix')
        parser.add_argument('--labels', help='CSV: one label per training point')
        parser.add_argument('--test-points', dest='test_points', type=int,
                            help='Trailing rows of the kernel matrix that are test points')
        parser.add_argument('--lambda', dest='ridge', type=float, help='Ridge lambda (default 1)')
        parser.add_argument('--features', type=int, help='Random feature count P (default 100)')
        parser.add_argument('--replicas', type=int, help='Feature draws (default 400)')
        parser.add_argument('--preset', help="'rbf' builds a seeded RBF problem instead of reading files")
        parser.add_argument('--kind', dest='dist_kind', help='gaussian or lipschitz features')
        parser.add_argument('--n', type=int, help='Training points for the rbf preset (default 200)')
        parser.add_argument('--n-test', dest='n_test', type=int, help='Test points for the rbf preset (default 10)')

    def load_problem(self, params):
        if params['preset'] == 'rbf':
            return rbf_kernel_problem(params['n'], params['n_test'], seed=params['seed'],
                                      ridge=params['ridge'], features=params['features'])
        matrix = read_matrix(params['kernel'])
        if matrix.shape[1] == 1:
            return matrix[:, 0]
        if matrix.shape[0] != matrix.shape[1]:
            raise ConfigError(f"kernel matrix must be square, got {matrix.shape}")
        size = matrix.shape[0] - params['test_points']
        if size < 1:
            raise ConfigError("test points leave no training points")
        if not params.get('labels'):
            raise ConfigError("--labels is required with a kernel matrix")
        labels = read_matrix(params['labels'])[:, 0]
        return KernelProblem(matrix[:size, :size], labels, params['ridge'], params['features'],
                             joint_kernel=matrix if params['test_points'] else None)

    def run_command(self, params):
        problem = self.load_problem(params)
        if isinstance(problem, np.ndarray):
            effective = effective_ridge(problem, problem.size, params['features'], params['ridge'])
            report = {'lambda': params['ridge'], 'lambda_tilde': effective.lambda_tilde}
        elif problem.test_count == 0:
            effective = effective_ridge(problem.eigenvalues, problem.size, problem.features, problem.ridge)
            report = {'lambda': problem.ridge, 'lambda_tilde': effective.lambda_tilde}
        else:
            result = debias_experiment(problem, params['replicas'], params['seed'],
                                       kind=params['dist_kind'], threads=params['threads'])
            report = result.as_dict()
            if problem.features < problem.size and not result.passed:
                self.stdout.write(self.render(RidgeReportSerializer(report).data))
                raise CheckFailedError(
                    f"effective ridge closer than the naive ridge at only {result.wins}/{result.mean_rf.size} points"
                )

        data = RidgeReportSerializer(report).data
        (self.output_dir(params) / 'ridge.json').write_bytes(self.render(data).encode('utf-8'))
        return self.render(data)
