import numpy as np

from equiv_app.cli import SpeqCommand
from equiv_app.equiv_service import CovarianceModel, closed_form_identity_c, solution_record, solve_fixed_point
from equiv_app.errors import CheckFailedError, PreconditionError
from equiv_app.serializers import SolutionRecordSerializer, SolveSerializer

CLOSED_FORM_TOL = 1e-10


class Command(SpeqCommand):
    help = 'Solve the deterministic-equivalent fixed point c(z) and print a JSON record'
    serializer_class = SolveSerializer

    def add_command_arguments(self, parser):
        parser.add_argument('--gamma', type=float, help='gamma = p/n')
        parser.add_argument('--sigma', help="Population spec: identity, zero, diag:..., two-level:a,b, uniform:a,b, csv:path")
        parser.add_argument('--p', type=int, help='Dimension p')
        parser.add_argument('--z', help="Spectral parameter, e.g. -1 or 0.5+1i")
        parser.add_argument('--tol', type=float, help='Relative tolerance on |F(c) - c|')
        parser.add_argument('--max-iter', dest='max_iter', type=int, help='Iteration cap')
        parser.add_argument('--check', action='store_true', default=None,
                            help='Compare with the closed-form root (Sigma = I only)')

    def run_command(self, params):
        model = CovarianceModel(params['sigma_eigenvalues'], params['gamma'])
        z = params['z']
        solution = solve_fixed_point(model, z, tol=params.get('tol'), max_iter=params.get('max_iter'))
        record = dict(solution_record(model, solution))

        if params['check']:
            if not np.all(model.sigma_eigenvalues == 1.0):
                raise PreconditionError("--check needs sigma = identity")
            expected = closed_form_identity_c(model.gamma, z)
            error = abs(solution.c - expected) / abs(expected)
            if error > CLOSED_FORM_TOL:
                raise CheckFailedError(f"c={solution.c} differs from the closed form {expected} ({error:.2e})")

        return self.render(SolutionRecordSerializer(record).data)
