"""
Random data matrices with i.i.d. concentrated columns.

Every column draws from its own counter-based stream keyed by
(seed, replica, column), so a matrix is bit-identical whatever the thread
count or scheduling.
"""
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.integrate
import scipy.stats

from equiv_app.errors import ConfigError, DimensionError, PreconditionError
from equiv_app.measures import empirical_spectrum, kolmogorov_distance
from equiv_app.resolvents import DataMatrix, as_data_matrix, resolvent_view, sample_covariance
from equiv_app.utils import run_parallel

logger = logging.getLogger(__name__)

MATRIX_MAGIC = b'SPEQMAT1'
DEFAULT_GAMMA_BOUND = 16.0
EFFECTIVE_COVARIANCE_STREAM = 2 ** 31 - 1
PROBE_STREAM = 2 ** 31 - 2


class ColumnKind(str, enum.Enum):
    GAUSSIAN_LINEAR = 'gaussian'
    RADEMACHER_LINEAR = 'rademacher'
    LIPSCHITZ_GAUSSIAN_FEATURE = 'lipschitz'


def _soft_threshold(values, threshold=0.5):
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def _clip(values, bound=1.0):
    return np.clip(values, -bound, bound)


def _tanh(values, scale=1.0):
    return np.tanh(scale * values) / scale


LIPSCHITZ_MAPS = {
    'soft_threshold': _soft_threshold,
    'clip': _clip,
    'tanh': _tanh,
}


@dataclass(frozen=True)
class LipschitzMap:
    """
    Odd 1-Lipschitz scalar map applied entrywise, rescaled to unit variance
    on a standard Gaussian input.
    """
    name: str = 'soft_threshold'
    parameter: float = 0.5
    variance: float = field(init=False)

    def __post_init__(self):
        if self.name not in LIPSCHITZ_MAPS:
            raise ConfigError(f"unknown Lipschitz map '{self.name}'; choose from {', '.join(LIPSCHITZ_MAPS)}")
        if self.parameter <= 0:
            raise ConfigError("Lipschitz map parameter must be positive")
        func = LIPSCHITZ_MAPS[self.name]
        variance, _ = scipy.integrate.quad(
            lambda t: float(func(np.array(t), self.parameter)) ** 2 * scipy.stats.norm.pdf(t), -np.inf, np.inf,
        )
        object.__setattr__(self, 'variance', float(variance))

    def __call__(self, values):
        return LIPSCHITZ_MAPS[self.name](values, self.parameter) / np.sqrt(self.variance)


@dataclass(frozen=True)
class ColumnDistribution:
    """
    Law of one column: mean + S w with S = basis diag(sqrt(lambda)).

    w is standard Gaussian, Rademacher, or, for the Lipschitz kind, each
    coordinate of S g is passed through the map at its own scale.
    """
    kind: ColumnKind
    sigma_eigenvalues: np.ndarray
    mean: np.ndarray = None
    basis: np.ndarray = None
    mean_norm: float = 0.0
    lipschitz_map: LipschitzMap = None

    def __post_init__(self):
        kind = ColumnKind(self.kind)
        eigenvalues = np.atleast_1d(np.asarray(self.sigma_eigenvalues, dtype=np.float64))
        if eigenvalues.ndim != 1 or eigenvalues.size == 0:
            raise DimensionError("sigma eigenvalues must be a non-empty 1-D array")
        if np.any(eigenvalues < 0) or not np.all(np.isfinite(eigenvalues)):
            raise PreconditionError("sigma eigenvalues must be finite and nonnegative")
        p = eigenvalues.size
        mean = np.zeros(p) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        if mean.shape != (p,):
            raise DimensionError(f"mean must have length {p}")
        if np.linalg.norm(mean) > self.mean_norm + 1e-12:
            raise PreconditionError(f"||mean|| = {np.linalg.norm(mean):.6g} exceeds the declared bound {self.mean_norm}")
        basis = self.basis
        if basis is not None:
            basis = np.asarray(basis, dtype=np.float64)
            if basis.shape != (p, p):
                raise DimensionError(f"basis must be {p}x{p}")
            if np.linalg.norm(basis.T @ basis - np.eye(p)) > 1e-10 * p:
                raise PreconditionError("basis must be orthogonal")
        lipschitz_map = self.lipschitz_map
        if kind == ColumnKind.LIPSCHITZ_GAUSSIAN_FEATURE and lipschitz_map is None:
            lipschitz_map = LipschitzMap()
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'sigma_eigenvalues', eigenvalues)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'basis', basis)
        object.__setattr__(self, 'lipschitz_map', lipschitz_map)

    @property
    def p(self):
        return self.sigma_eigenvalues.size

    @property
    def sigma_sqrt(self):
        root = np.sqrt(self.sigma_eigenvalues)
        if self.basis is None:
            return np.diag(root)
        return self.basis * root

    @property
    def is_centered(self):
        return not np.any(self.mean)

    @property
    def is_sign_symmetric(self):
        """Law invariant under coordinate sign flips in Sigma's eigenbasis (centered columns only)."""
        if not self.is_centered:
            return False
        return self.kind == ColumnKind.GAUSSIAN_LINEAR or self.basis is None

    def transform(self, draws):
        """Map a p x m block of standard draws to columns."""
        if self.kind == ColumnKind.LIPSCHITZ_GAUSSIAN_FEATURE:
            linear = self.sigma_sqrt @ draws
            scale = np.sqrt(np.sum(self.sigma_sqrt ** 2, axis=1))
            safe = np.where(scale > 0, scale, 1.0)
            columns = scale[:, None] * self.lipschitz_map(linear / safe[:, None])
        else:
            columns = self.sigma_sqrt @ draws
        return self.mean[:, None] + columns


@dataclass(frozen=True)
class RunConfig:
    p: int
    n: int
    distribution: ColumnDistribution
    seed: int
    replicas: int = 1
    gamma_bound: float = DEFAULT_GAMMA_BOUND

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ConfigError(f"p and n must be positive, got p={self.p}, n={self.n}")
        if self.distribution.p != self.p:
            raise ConfigError(f"distribution dimension {self.distribution.p} differs from p={self.p}")
        if self.replicas < 1:
            raise ConfigError("replicas must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        gamma = self.p / self.n
        if not 1.0 / self.gamma_bound <= gamma <= self.gamma_bound:
            raise ConfigError(f"gamma = p/n = {gamma:.4g} is outside [1/{self.gamma_bound}, {self.gamma_bound}]")

    @property
    def gamma(self):
        return self.p / self.n

    def with_n(self, n, p=None):
        """Same law at another size; p follows gamma unless given."""
        if p is None:
            p = max(1, int(round(self.gamma * n)))
        distribution = self.distribution
        if p != self.p:
            distribution = resize_distribution(distribution, p)
        return RunConfig(p=p, n=n, distribution=distribution, seed=self.seed,
                         replicas=self.replicas, gamma_bound=self.gamma_bound)


def resize_distribution(distribution, p):
    """
    The same population profile at dimension p: eigenvalues resampled by quantile.
    Only defined for centered laws in the identity basis.
    """
    if distribution.basis is not None or not distribution.is_centered:
        raise ConfigError("only centered identity-basis laws can be resized")
    eigenvalues = np.sort(distribution.sigma_eigenvalues)[::-1]
    quantiles = (np.arange(p) + 0.5) / p
    resized = eigenvalues[np.minimum((quantiles * eigenvalues.size).astype(int), eigenvalues.size - 1)]
    return ColumnDistribution(
        kind=distribution.kind, sigma_eigenvalues=resized,
        lipschitz_map=distribution.lipschitz_map,
    )


def column_generator(seed, replica_index, column_index):
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replica_index), int(column_index)))
    return np.random.Generator(np.random.Philox(sequence))


def _standard_draws(kind, p, seed, replica_index, columns):
    draws = np.empty((p, columns))
    for column in range(columns):
        generator = column_generator(seed, replica_index, column)
        if kind == ColumnKind.RADEMACHER_LINEAR:
            draws[:, column] = generator.integers(0, 2, size=p) * 2.0 - 1.0
        else:
            draws[:, column] = generator.standard_normal(p)
    return draws


def sample_columns(distribution, columns, seed, replica_index):
    return distribution.transform(_standard_draws(distribution.kind, distribution.p, seed, replica_index, columns))


def sample_matrix(config, replica_index):
    """
    One p x n data matrix, deterministic in (seed, replica_index).

    Args:
        config: RunConfig
        replica_index: replica number, selects the stream family

    Returns:
        DataMatrix
    """
    if replica_index < 0:
        raise PreconditionError("replica index must be nonnegative")
    return DataMatrix(sample_columns(config.distribution, config.n, config.seed, replica_index))


def sample_replicas(config, threads=None):
    return run_parallel(lambda replica: sample_matrix(config, replica), range(config.replicas), threads)


def empirical_g(X, z):
    """g_K(z) = (1/p) Tr (K - zI)^-1."""
    return resolvent_view(sample_covariance(as_data_matrix(X)), z).stieltjes()


@dataclass(frozen=True)
class SpectralNormReport:
    norms: tuple
    bound: float
    slack: float

    @property
    def passed(self):
        return max(self.norms) <= self.bound

    def as_dict(self):
        return {'max_norm': max(self.norms), 'bound': self.bound, 'slack': self.slack, 'passed': self.passed}


def spectral_norm_check(config, slack=1.0, threads=None):
    """||K|| per replica against (1 + sqrt(gamma))^2 ||Sigma|| + slack."""

    def _norm(replica):
        K = sample_covariance(sample_matrix(config, replica))
        return float(np.linalg.eigvalsh(K)[-1]) if K.any() else 0.0

    norms = tuple(run_parallel(_norm, range(config.replicas), threads))
    sigma_norm = float(np.max(config.distribution.sigma_eigenvalues))
    bound = (1 + np.sqrt(config.gamma)) ** 2 * sigma_norm + slack
    report = SpectralNormReport(norms=norms, bound=float(bound), slack=slack)
    logger.info(f"Spectral norm check p={config.p} n={config.n}: max {max(norms):.4f} vs bound {bound:.4f}")
    return report


def effective_covariance(distribution, columns, seed):
    """
    Eigenvalues (descending) of E[xx'] estimated from `columns` draws.
    Used as the actual Sigma when a nonlinearity changes the covariance.
    """
    if columns < 1:
        raise PreconditionError("need at least one column")
    samples = sample_columns(distribution, columns, seed, EFFECTIVE_COVARIANCE_STREAM)
    second_moment = samples @ samples.T / columns
    eigenvalues = np.linalg.eigvalsh(0.5 * (second_moment + second_moment.T))
    return np.clip(eigenvalues, 0.0, None)[::-1].copy()


@dataclass(frozen=True)
class ConcentrationProbe:
    diameter: float
    normalized_diameter: float
    samples: int

    threshold = 2.0

    @property
    def passed(self):
        return self.normalized_diameter <= self.threshold


def concentration_probe(distribution, seed, samples=2000):
    """
    Heuristic check of Gaussian concentration for the 1-Lipschitz observable ||x||.

    Fits the smallest s with P(|f - median| > t) <= 2 exp(-(t/s)^2) over the
    empirical tail and normalizes by ||Sigma||^1/2. Logs a warning instead of
    failing.
    """
    columns = sample_columns(distribution, samples, seed, PROBE_STREAM)
    observable = np.linalg.norm(columns - distribution.mean[:, None], axis=0)
    deviations = np.sort(np.abs(observable - np.median(observable)))[::-1]
    tail = np.arange(1, samples + 1) / samples
    positive = deviations > 0
    if not np.any(positive):
        return ConcentrationProbe(0.0, 0.0, samples)
    diameter = float(np.max(deviations[positive] / np.sqrt(np.log(2.0 / tail[positive]))))
    scale = np.sqrt(max(float(np.max(distribution.sigma_eigenvalues)), 1e-300))
    probe = ConcentrationProbe(diameter, diameter / scale, samples)
    if not probe.passed:
        logger.warning(
            f"Concentration probe for {distribution.kind.value} columns: observable diameter "
            f"{probe.normalized_diameter:.3f} exceeds {probe.threshold}"
        )
    return probe


def nested_block_distance(p, p_prime, n, seed):
    """
    Kolmogorov distance between the ESDs of C = XX'/n and its leading
    p' x p' block, next to the interlacing bound (p - p')/p.
    """
    if not 1 <= p_prime <= p:
        raise PreconditionError(f"need 1 <= p' <= p, got p={p}, p'={p_prime}")
    distribution = ColumnDistribution(ColumnKind.GAUSSIAN_LINEAR, np.ones(p))
    X = sample_matrix(RunConfig(p=p, n=n, distribution=distribution, seed=seed,
                                gamma_bound=max(DEFAULT_GAMMA_BOUND, p / n, n / p)), 0)
    C = sample_covariance(X)
    delta = kolmogorov_distance(empirical_spectrum(C).cdf(), empirical_spectrum(C[:p_prime, :p_prime]).cdf())
    return delta, (p - p_prime) / p


def dump_matrix(X, path):
    """Binary dump: b'SPEQMAT1', p and n as little-endian uint32, then row-major float64."""
    X = as_data_matrix(X)
    header = MATRIX_MAGIC + np.array([X.p, X.n], dtype='<u4').tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(X.entries, dtype='<f8').tobytes())
    return Path(path)


def load_matrix(path):
    payload = Path(path).read_bytes()
    if len(payload) < 16 or payload[:8] != MATRIX_MAGIC:
        raise ConfigError(f"{path} is not a SPEQMAT1 matrix file")
    p, n = np.frombuffer(payload[8:16], dtype='<u4')
    data = np.frombuffer(payload[16:], dtype='<f8')
    if data.size != int(p) * int(n):
        raise ConfigError(f"{path} holds {data.size} values, header says {p}x{n}")
    return DataMatrix(data.reshape(int(p), int(n)))
