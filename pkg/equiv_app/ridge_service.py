"""
Kernel ridge regression, random-features regression and the effective ridge.

The average random-features predictor at ridge lambda behaves like the kernel
predictor at a larger ridge lambda_tilde, the unique positive solution of

    lambda_tilde = lambda + (lambda_tilde / P) sum_i d_i / (lambda_tilde + d_i)

with d_i the kernel eigenvalues. Equivalently lambda_tilde = -c for the
deterministic-equivalent fixed point with Sigma = K_X, gamma = N/P, z = -lambda.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from equiv_app.equiv_service import CovarianceModel, solve_fixed_point
from equiv_app.errors import ConsistencyError, DimensionError, NumericError, PreconditionError
from equiv_app.resolvents import symmetric_eigh
from equiv_app.simulation_service import ColumnDistribution, ColumnKind, sample_columns
from equiv_app.utils import run_parallel

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 200
AGREEMENT_TOL = 1e-8
CROSS_CHECK_SOLVER_TOL = 1e-13
INTERCHANGE_TOL = 1e-9
DEFAULT_NUGGET = 0.01


@dataclass(frozen=True)
class KernelProblem:
    """
    Training kernel K_X (N x N, positive definite), labels Y, ridge and feature count P.

    `joint_kernel` optionally holds the (N+T) x (N+T) kernel over training and
    test points; random features are drawn with that covariance.
    """
    kernel: np.ndarray
    labels: np.ndarray
    ridge: float
    features: int
    joint_kernel: np.ndarray = None
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
            raise DimensionError(f"kernel must be square, got shape {kernel.shape}")
        if labels.size != kernel.shape[0]:
            raise DimensionError(f"labels have length {labels.size}, kernel is {kernel.shape[0]}x{kernel.shape[0]}")
        if not self.ridge > 0:
            raise PreconditionError(f"ridge must be positive, got {self.ridge}")
        if int(self.features) < 1:
            raise PreconditionError(f"feature count must be positive, got {self.features}")
        eigenvalues, _ = symmetric_eigh(kernel)
        eigenvalues = np.sort(eigenvalues)[::-1]
        if eigenvalues[-1] <= 0:
            raise PreconditionError("kernel matrix must be positive definite")
        joint = self.joint_kernel
        if joint is not None:
            joint = np.asarray(joint, dtype=np.float64)
            n = kernel.shape[0]
            if joint.ndim != 2 or joint.shape[0] != joint.shape[1] or joint.shape[0] < n:
                raise DimensionError(f"joint kernel must be square of size >= {n}")
            if not np.allclose(joint[:n, :n], kernel):
                raise PreconditionError("joint kernel does not extend the training kernel")
        object.__setattr__(self, 'kernel', 0.5 * (kernel + kernel.T))
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'ridge', float(self.ridge))
        object.__setattr__(self, 'features', int(self.features))
        object.__setattr__(self, 'joint_kernel', joint)
        object.__setattr__(self, 'eigenvalues', eigenvalues)

    @property
    def size(self):
        return self.kernel.shape[0]

    @property
    def gamma(self):
        return self.size / self.features

    @property
    def test_count(self):
        return 0 if self.joint_kernel is None else self.joint_kernel.shape[0] - self.size

    @property
    def test_rows(self):
        """k(x, .) for every test point, T x N."""
        if self.joint_kernel is None:
            return np.empty((0, self.size))
        return self.joint_kernel[self.size:, :self.size]

    def with_features(self, features):
        return KernelProblem(self.kernel, self.labels, self.ridge, features, self.joint_kernel)


@dataclass(frozen=True)
class EffectiveRidge:
    lambda_tilde: float
    residual: float
    iterations: int
    fixed_point_lambda: float = float('nan')

    @property
    def agreement(self):
        if not np.isfinite(self.fixed_point_lambda):
            return float('nan')
        return abs(self.lambda_tilde - self.fixed_point_lambda) / self.lambda_tilde


def _cholesky(matrix):
    try:
        return scipy.linalg.cho_factor(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        logger.error(f"Cholesky factorization failed on a {matrix.shape[0]}x{matrix.shape[0]} system")
        raise NumericError(f"positive-definite solve failed: {e}") from e


def krr_predict(problem, kernel_row, ridge=None):
    """
    KRR predictor k(x, .)'(K_X + ridge I)^-1 Y.

    Args:
        problem: KernelProblem
        kernel_row: N-vector k(x, .) or a T x N block of rows
        ridge: defaults to the problem's ridge

    Returns:
        float, or a T-vector for a block of rows
    """
    ridge = problem.ridge if ridge is None else float(ridge)
    if not ridge > 0:
        raise PreconditionError(f"ridge must be positive, got {ridge}")
    rows = np.asarray(kernel_row, dtype=np.float64)
    if rows.shape[-1] != problem.size:
        raise DimensionError(f"kernel row has length {rows.shape[-1]}, expected {problem.size}")
    factor = _cholesky(problem.kernel + ridge * np.eye(problem.size))
    weights = scipy.linalg.cho_solve(factor, problem.labels, check_finite=False)
    prediction = rows @ weights
    return float(prediction) if prediction.ndim == 0 else prediction


def rf_predict(features, phi_x, labels, ridge, check_interchange=False):
    """
    RF predictor P^-1/2 phi_x' F'(FF' + ridge I_N)^-1 Y with F = features / sqrt(P).

    Args:
        features: raw N x P feature matrix, entry (i, j) = phi_j(x_i)
        phi_x: P-vector phi_j(x), or a T x P block for several points
        labels: N-vector Y
        ridge: positive ridge
        check_interchange: also solve on the P side and require agreement to 1e-9

    Returns:
        float, or a T-vector for a block
    """
    if not ridge > 0:
        raise PreconditionError(f"ridge must be positive, got {ridge}")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    phi_x = np.asarray(phi_x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    n, p = features.shape
    if labels.size != n or phi_x.shape[-1] != p:
        raise DimensionError(f"features {features.shape}, phi_x {phi_x.shape} and labels {labels.shape} disagree")
    scaled = features / np.sqrt(p)
    factor = _cholesky(scaled @ scaled.T + ridge * np.eye(n))
    weights = scaled.T @ scipy.linalg.cho_solve(factor, labels, check_finite=False)
    if check_interchange:
        primal = scipy.linalg.cho_solve(_cholesky(scaled.T @ scaled + ridge * np.eye(p)), scaled.T @ labels)
        gap = np.max(np.abs(primal - weights)) / max(1.0, np.max(np.abs(weights)))
        if gap > INTERCHANGE_TOL:
            raise ConsistencyError(f"N-side and P-side ridge solves disagree by {gap:.2e}")
    prediction = (phi_x / np.sqrt(p)) @ weights
    return float(prediction) if prediction.ndim == 0 else prediction


def interchange_residual(features, ridge):
    """
    Residuals of the push-through identities for F = features / sqrt(P):
    F'(FF' + lambda I_N)^-1 = (F'F + lambda I_P)^-1 F' and
    I_N - lambda (FF' + lambda I)^-1 = FF'(FF' + lambda I)^-1.

    Returns:
        dict: max-entry residual of each identity
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n, p = features.shape
    scaled = features / np.sqrt(p)
    gram = scaled @ scaled.T
    inverse_n = scipy.linalg.cho_solve(_cholesky(gram + ridge * np.eye(n)), np.eye(n))
    inverse_p = scipy.linalg.cho_solve(_cholesky(scaled.T @ scaled + ridge * np.eye(p)), np.eye(p))
    return {
        'push_through': float(np.max(np.abs(scaled.T @ inverse_n - inverse_p @ scaled.T))),
        'complement': float(np.max(np.abs(np.eye(n) - ridge * inverse_n - gram @ inverse_n))),
    }


def _ridge_equation(t, d, features, ridge):
    share = d / (t + d)
    value = t - ridge - t * np.sum(share) / features
    slope = 1.0 - np.sum(share ** 2) / features
    return value, slope


def effective_ridge(d, N, P, ridge, cross_check=True):
    """
    Effective ridge lambda_tilde by safeguarded Newton on [lambda, lambda + sum(d)/P].

    The equation is convex in lambda_tilde, negative at lambda and positive at
    the right end; a Newton step that leaves the current bracket is replaced
    by bisection.

    Args:
        d: kernel eigenvalues (all positive)
        N: number of training points (len(d))
        P: number of random features
        ridge: lambda > 0
        cross_check: also solve the fixed-point characterization and compare

    Returns:
        EffectiveRidge

    Raises:
        ConsistencyError: the two characterizations disagree beyond 1e-8 relative
    """
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if d.size != int(N):
        raise DimensionError(f"expected {N} eigenvalues, got {d.size}")
    if not ridge > 0:
        raise PreconditionError(f"ridge must be positive, got {ridge}")
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise PreconditionError("kernel eigenvalues must be positive and finite")
    if int(P) < 1:
        raise PreconditionError(f"feature count must be positive, got {P}")
    ridge = float(ridge)
    P = int(P)

    lo, hi = ridge, ridge + float(np.sum(d)) / P
    t = hi
    iterations = 0
    for iterations in range(1, NEWTON_MAX_ITER + 1):
        value, slope = _ridge_equation(t, d, P, ridge)
        if value < 0:
            lo = t
        else:
            hi = t
        step = t - value / slope if slope > 0 else None
        if step is None or not lo <= step <= hi:
            step = 0.5 * (lo + hi)
        if abs(step - t) <= NEWTON_TOL * t:
            t = step
            break
        t = step
    residual = abs(_ridge_equation(t, d, P, ridge)[0]) / t

    fixed_point_lambda = float('nan')
    if cross_check:
        model = CovarianceModel(d, N / P)
        solution = solve_fixed_point(model, -ridge, tol=CROSS_CHECK_SOLVER_TOL)
        fixed_point_lambda = float(-solution.c.real)
        disagreement = abs(t - fixed_point_lambda) / t
        if disagreement > AGREEMENT_TOL:
            logger.error(f"Effective ridge {t} and -c = {fixed_point_lambda} disagree ({disagreement:.2e})")
            raise ConsistencyError(
                f"effective ridge characterizations disagree: {t} vs {fixed_point_lambda}"
            )
    return EffectiveRidge(float(t), float(residual), iterations, fixed_point_lambda)


def rbf_kernel_problem(N, n_test=10, length_scale=1.0, nugget=DEFAULT_NUGGET, seed=0,
                       ridge=1.0, features=None, dimension=3):
    """
    Gaussian RBF kernel on seeded points of [-1, 1]^dimension, nugget added to
    the diagonal of the joint train/test kernel; labels from a smooth target
    plus 0.1 Gaussian noise.
    """
    if N < 1 or n_test < 0:
        raise PreconditionError("need N >= 1 training points and n_test >= 0 test points")
    if length_scale <= 0 or nugget < 0:
        raise PreconditionError("length scale must be positive and nugget nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    points = rng.uniform(-1.0, 1.0, size=(N + n_test, dimension))
    squared = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    joint = np.exp(-squared / (2 * length_scale ** 2)) + nugget * np.eye(N + n_test)
    train = points[:N]
    labels = np.sin(np.pi * train[:, 0]) + 0.5 * train[:, 1] + 0.1 * rng.standard_normal(N)
    return KernelProblem(
        kernel=joint[:N, :N],
        labels=labels,
        ridge=ridge,
        features=N if features is None else features,
        joint_kernel=joint,
    )


def _kernel_factor(matrix):
    eigenvalues, eigenvectors = symmetric_eigh(matrix)
    return eigenvectors * np.sqrt(eigenvalues)


def sample_features(problem, P, kind, seed, replica, lipschitz_map=None, factor=None):
    """
    (N+T) x P feature matrix with i.i.d. columns of covariance equal to the joint kernel.

    Gaussian columns are K^1/2 g; Lipschitz columns are K^1/2 phi(g) with phi
    applied entrywise and normalized to unit variance, so the covariance is
    unchanged while the law is not Gaussian.
    """
    kind = ColumnKind(kind)
    if kind == ColumnKind.RADEMACHER_LINEAR:
        raise PreconditionError("random features are Gaussian or Lipschitz-of-Gaussian")
    joint = problem.kernel if problem.joint_kernel is None else problem.joint_kernel
    factor = _kernel_factor(joint) if factor is None else factor
    white = ColumnDistribution(kind=kind, sigma_eigenvalues=np.ones(joint.shape[0]), lipschitz_map=lipschitz_map)
    return factor @ sample_columns(white, int(P), seed, replica)


@dataclass(frozen=True)
class DebiasReport:
    ridge: float
    lambda_tilde: float
    mean_rf: np.ndarray
    stderr: np.ndarray
    krr_tilde: np.ndarray
    krr_naive: np.ndarray
    replicas: int
    kind: str

    @property
    def gap_tilde(self):
        return np.abs(self.mean_rf - self.krr_tilde)

    @property
    def gap_naive(self):
        return np.abs(self.mean_rf - self.krr_naive)

    @property
    def wins(self):
        return int(np.sum(self.gap_tilde < self.gap_naive))

    @property
    def passed(self):
        return self.wins == self.mean_rf.size

    def as_dict(self):
        return {
            'lambda': self.ridge,
            'lambda_tilde': self.lambda_tilde,
            'gap_tilde': float(np.max(self.gap_tilde)) if self.mean_rf.size else 0.0,
            'gap_naive': float(np.max(self.gap_naive)) if self.mean_rf.size else 0.0,
            'kind': self.kind,
            'replicas': self.replicas,
            'per_x': [
                {
                    'index': index,
                    'mean_rf': float(self.mean_rf[index]),
                    'stderr': float(self.stderr[index]),
                    'krr_tilde': float(self.krr_tilde[index]),
                    'krr_naive': float(self.krr_naive[index]),
                    'gap_tilde': float(self.gap_tilde[index]),
                    'gap_naive': float(self.gap_naive[index]),
                }
                for index in range(self.mean_rf.size)
            ],
        }


def debias_experiment(problem, replicas, seed, kind=ColumnKind.GAUSSIAN_LINEAR, lipschitz_map=None, threads=None):
    """
    Monte Carlo mean of the RF predictor over feature draws next to KRR at
    lambda and at lambda_tilde, at every test point of the problem.

    Returns:
        DebiasReport
    """
    if problem.test_count == 0:
        raise PreconditionError("the debias experiment needs test points in the joint kernel")
    if replicas < 2:
        raise PreconditionError("the debias experiment needs at least two replicas")
    kind = ColumnKind(kind)
    N, P = problem.size, problem.features
    effective = effective_ridge(problem.eigenvalues, N, P, problem.ridge)
    factor = _kernel_factor(problem.joint_kernel)

    def _replica(replica):
        phi = sample_features(problem, P, kind, seed, replica, lipschitz_map, factor)
        return rf_predict(phi[:N], phi[N:], problem.labels, problem.ridge)

    predictions = np.array(run_parallel(_replica, range(replicas), threads))
    rows = problem.test_rows
    report = DebiasReport(
        ridge=problem.ridge,
        lambda_tilde=effective.lambda_tilde,
        mean_rf=predictions.mean(axis=0),
        stderr=predictions.std(axis=0, ddof=1) / np.sqrt(replicas),
        krr_tilde=np.atleast_1d(krr_predict(problem, rows, effective.lambda_tilde)),
        krr_naive=np.atleast_1d(krr_predict(problem, rows, problem.ridge)),
        replicas=replicas,
        kind=kind.value,
    )
    logger.info(f"Debias experiment ({kind.value}, N={N}, P={P}): lambda_tilde={effective.lambda_tilde:.6f}, "
                f"effective ridge closer at {report.wins}/{report.mean_rf.size} points")
    return report
