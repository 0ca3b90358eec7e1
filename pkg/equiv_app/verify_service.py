"""
Monte Carlo verification of the deterministic-equivalent bounds at desk scale.

Constants in the bounds are not known, so every check is a decay slope or
a trend against the theoretical shape (kappa / sqrt(n) and friends), never an
absolute threshold on a constant. Reports are bit-reproducible from the
seed: replicas are generated from per-column streams and reduced in
replica order.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.stats
from django.conf import settings

from equiv_app.equiv_service import (
    CovarianceModel, OmegaDomain, g_nu, solve_fixed_point,
)
from equiv_app.errors import ConfigError, PreconditionError, ValidityRegionError
from equiv_app.freeconv_service import free_multiplicative_mp, nu_check_measure
from equiv_app.measures import empirical_spectrum, kolmogorov_distance
from equiv_app.resolvents import (
    ResolventView, as_spectral_parameter, co_sample_covariance, concentration_scale,
    resolvent, sample_covariance, symmetric_eigh,
)
from equiv_app.simulation_service import (
    ColumnDistribution, ColumnKind, RunConfig, column_generator, sample_columns, sample_matrix,
)
from equiv_app.utils import parse_sigma_spec, run_parallel, write_csv

logger = logging.getLogger(__name__)

MIN_REPLICAS = 8
MIN_SWEEP_POINTS = 4
EFFECTIVE_COVARIANCE_COLUMNS = 20000
KOLMOGOROV_RATE = 1.0 / 70
AUXILIARY_STREAM = 2 ** 31 - 3
CSV_COLUMNS = ('name', 'n', 'value', 'stderr', 'bound', 'ratio')
VANISHING_TOL = 1e-14


@dataclass(frozen=True)
class SweepConfig:
    """
    A family of RunConfigs sharing gamma, population profile and column law.

    p = round(gamma n) at each n; sigma_spec is resolved at that p.
    """
    gamma: float
    n_values: tuple
    replicas: int
    seed: int
    kind: ColumnKind = ColumnKind.GAUSSIAN_LINEAR
    sigma_spec: str = 'identity'
    lipschitz_map: object = None

    def __post_init__(self):
        n_values = tuple(sorted(int(n) for n in self.n_values))
        object.__setattr__(self, 'n_values', n_values)
        object.__setattr__(self, 'kind', ColumnKind(self.kind))
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.replicas < MIN_REPLICAS:
            raise ConfigError(f"a sweep needs at least {MIN_REPLICAS} replicas, got {self.replicas}")
        if self.replicas > settings.SPEQ_MAX_REPLICAS:
            raise ConfigError(f"replicas {self.replicas} exceed SPEQ_MAX_REPLICAS={settings.SPEQ_MAX_REPLICAS}")
        if len(set(n_values)) < MIN_SWEEP_POINTS:
            raise ConfigError(f"a sweep needs at least {MIN_SWEEP_POINTS} distinct n values")
        if n_values[-1] > settings.SPEQ_MAX_N:
            raise ConfigError(f"n={n_values[-1]} exceeds SPEQ_MAX_N={settings.SPEQ_MAX_N}")
        if self.p_for(n_values[-1]) > settings.SPEQ_MAX_P:
            raise ConfigError(f"p={self.p_for(n_values[-1])} exceeds SPEQ_MAX_P={settings.SPEQ_MAX_P}")

    def p_for(self, n):
        return max(1, int(round(self.gamma * n)))

    def run_config(self, n):
        p = self.p_for(n)
        distribution = ColumnDistribution(
            kind=self.kind,
            sigma_eigenvalues=parse_sigma_spec(self.sigma_spec, p),
            lipschitz_map=self.lipschitz_map,
        )
        return RunConfig(p=p, n=n, distribution=distribution, seed=self.seed,
                         replicas=self.replicas, gamma_bound=max(16.0, self.gamma, 1 / self.gamma))

    def with_kind(self, kind):
        return SweepConfig(self.gamma, self.n_values, self.replicas, self.seed, kind,
                           self.sigma_spec, self.lipschitz_map)


@dataclass(frozen=True)
class StatRow:
    name: str
    n: int
    value: float
    stderr: float = 0.0
    bound: float = float('nan')

    @property
    def ratio(self):
        if not np.isfinite(self.bound) or self.bound == 0:
            return float('nan')
        return self.value / self.bound


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    halfwidth: float
    residuals: tuple

    def within(self, low, high):
        return bool(np.isfinite(self.slope) and low <= self.slope <= high)


@dataclass(frozen=True)
class SweepResult:
    """Per-n statistics plus a log-log slope fitted on the primary statistic."""
    statistic: str
    n_values: tuple
    rows: tuple
    fit: SlopeFit
    extra: dict = field(default_factory=dict)

    def values(self, name=None):
        name = name or self.statistic
        return np.array([row.value for row in self.rows if row.name == name])

    @property
    def slope(self):
        return self.fit.slope

    @property
    def vanishes(self):
        """Every value of the primary statistic is zero to rounding (Sigma = 0)."""
        values = self.values()
        return bool(values.size and np.all(np.abs(values) <= VANISHING_TOL))

    def slope_within(self, low, high):
        # a vanishing series has no slope to fit and meets any decay bound
        return self.vanishes or self.fit.within(low, high)


def rows_to_columns(rows):
    return {
        'name': [row.name for row in rows],
        'n': [row.n for row in rows],
        'value': [row.value for row in rows],
        'stderr': [row.stderr for row in rows],
        'bound': [row.bound for row in rows],
        'ratio': [row.ratio for row in rows],
    }


def write_rows(path, rows):
    return write_csv(path, rows_to_columns(rows))


def fit_loglog(n_values, values):
    """
    Least-squares slope of log(value) against log(n) with a 95% half-width.
    Non-positive values are left out; fewer than three usable points give NaN.
    """
    n_values = np.asarray(n_values, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    usable = values > 0
    if np.count_nonzero(usable) < 3:
        return SlopeFit(float('nan'), float('nan'), float('nan'), ())
    x = np.log(n_values[usable])
    y = np.log(values[usable])
    fit = scipy.stats.linregress(x, y)
    dof = x.size - 2
    halfwidth = float(scipy.stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else float('nan')
    residuals = tuple((y - (fit.intercept + fit.slope * x)).tolist())
    return SlopeFit(float(fit.slope), float(fit.intercept), halfwidth, residuals)


def kappa(z):
    """kappa = |z|^-11/2 on the real branch, |z|^5/2 / Im(z)^9 in the upper half-plane."""
    z = as_spectral_parameter(z)
    if z.is_real:
        return abs(z.value) ** -5.5
    return abs(z.value) ** 2.5 / z.value.imag ** 9


def check_validity_region(z, n_min):
    """Raise ValidityRegionError when z is outside the region where the gap bound applies."""
    z = as_spectral_parameter(z)
    modulus = abs(z.value)
    if z.is_real:
        if modulus ** -7 > 10 * n_min:
            raise ValidityRegionError(
                f"validity region violated: |z|^-7 = {modulus ** -7:.4g} > 10 n_min = {10 * n_min}"
            )
    else:
        value = z.value.imag ** -16 * modulus ** 7
        if value > n_min / 10:
            raise ValidityRegionError(
                f"validity region violated: Im(z)^-16 |z|^7 = {value:.4g} > n_min/10 = {n_min / 10}"
            )
    return z


@dataclass(frozen=True)
class Population:
    """Sigma = E[xx'] as eigenvalues in coordinate order plus an eigenbasis (None = identity)."""
    eigenvalues: np.ndarray
    basis: object
    model: CovarianceModel
    sign_symmetric: bool

    def cluster_mean(self, diagonal):
        """Average a diagonal inside groups of equal eigenvalues."""
        _, inverse = np.unique(self.eigenvalues, return_inverse=True)
        sums = np.zeros(inverse.max() + 1, dtype=np.complex128)
        np.add.at(sums, inverse, diagonal)
        counts = np.bincount(inverse)
        return (sums / counts)[inverse]

    def equivalent_diagonal(self, c, z):
        z = as_spectral_parameter(z).value
        return 1.0 / ((z / c) * self.eigenvalues - z)

    def equivalent_matrix(self, c, z):
        diagonal = self.equivalent_diagonal(c, z)
        if self.basis is None:
            return np.diag(diagonal)
        return (self.basis * diagonal) @ self.basis.T


def population_for(config):
    """
    The population seen by the theory for this run: E[xx'] including the mean,
    estimated by sampling only for Lipschitz features in a rotated basis.
    """
    distribution = config.distribution
    mean = distribution.mean
    if distribution.kind == ColumnKind.LIPSCHITZ_GAUSSIAN_FEATURE and distribution.basis is not None:
        samples = sample_columns(distribution, EFFECTIVE_COVARIANCE_COLUMNS, config.seed, AUXILIARY_STREAM)
        eigenvalues, basis = symmetric_eigh(samples @ samples.T / EFFECTIVE_COVARIANCE_COLUMNS)
    elif distribution.is_centered:
        eigenvalues, basis = distribution.sigma_eigenvalues, distribution.basis
    else:
        S = distribution.sigma_sqrt
        eigenvalues, basis = symmetric_eigh(S @ S.T + np.outer(mean, mean))
    model = CovarianceModel(eigenvalues, config.gamma, mean_norm=float(np.linalg.norm(mean)))
    return Population(np.asarray(eigenvalues), basis, model, distribution.is_sign_symmetric)


def _replica_view(config, replica, z):
    K = sample_covariance(sample_matrix(config, replica))
    return ResolventView.from_matrix(K, z)


def _resolvent_component(population, view):
    """Per-replica contribution to the E[G] estimate: eigenbasis diagonal when symmetry allows."""
    if not population.sign_symmetric:
        return view.materialize()
    q = view.eigenvectors if population.basis is None else population.basis.T @ view.eigenvectors
    return (q ** 2) @ view.diagonal()


def _project(population, estimate):
    if population.sign_symmetric:
        return population.cluster_mean(estimate)
    return estimate


def _reference(population, c, z):
    if population.sign_symmetric:
        return population.equivalent_diagonal(c, z)
    return population.equivalent_matrix(c, z)


def _frobenius(delta):
    return float(np.sqrt(np.sum(np.abs(delta) ** 2)))


def mean_resolvent_gap(sweep, z, threads=None):
    """
    ||E[G_K(z)] - G(z)||_F across the sweep.

    E[G_K] is the replica mean projected by the symmetry of the column law
    when available. Replicas are split into two halves A, B: stderr is
    ||A - B||_F / 2 and 'gap_debiased' is sqrt(max(Re<A - G, B - G>, 0)),
    which removes the Monte Carlo floor. The slope is fitted on 'gap'.

    Returns:
        SweepResult with rows 'gap' and 'gap_debiased', bound kappa/sqrt(n)
    """
    z = check_validity_region(z, sweep.n_values[0])
    scale = kappa(z)
    rows = []
    warned = False
    for n in sweep.n_values:
        config = sweep.run_config(n)
        population = population_for(config)
        if not population.sign_symmetric and not warned:
            logger.warning("Column law is not sign-symmetric; the E[G] estimate uses the raw replica mean")
            warned = True
        solution = solve_fixed_point(population.model, z)
        reference = _reference(population, solution.c, z)

        components = run_parallel(
            lambda replica: _resolvent_component(population, _replica_view(config, replica, z)),
            range(config.replicas), threads,
        )
        half = config.replicas // 2
        first = _project(population, np.mean(components[:half], axis=0))
        second = _project(population, np.mean(components[half:2 * half], axis=0))
        estimate = _project(population, np.mean(components, axis=0))

        gap = _frobenius(estimate - reference)
        stderr = _frobenius(first - second) / 2
        inner = float(np.real(np.sum((first - reference) * np.conj(second - reference))))
        bound = scale / np.sqrt(n)
        rows.append(StatRow('gap', n, gap, stderr, bound))
        rows.append(StatRow('gap_debiased', n, float(np.sqrt(max(inner, 0.0))), stderr, bound))
        logger.info(f"Mean resolvent gap n={n} p={config.p}: {gap:.4e} (+/- {stderr:.1e})")

    result_rows = tuple(rows)
    gaps = [row.value for row in result_rows if row.name == 'gap']
    return SweepResult('gap', sweep.n_values, result_rows, fit_loglog(sweep.n_values, gaps))


def default_directions(p, seed, count=3):
    """e_1, the normalized all-ones vector and `count` seeded random unit vectors."""
    directions = [np.eye(p)[0], np.ones(p) / np.sqrt(p)]
    generator = column_generator(seed, AUXILIARY_STREAM, p)
    for _ in range(count):
        vector = generator.standard_normal(p)
        directions.append(vector / np.linalg.norm(vector))
    return directions


@dataclass(frozen=True)
class CorollaryReport:
    n: int
    stieltjes_gaps: np.ndarray
    direction_gaps: np.ndarray
    entry_gaps: np.ndarray
    stieltjes_target: float
    entry_target: float

    @property
    def hierarchy_fraction(self):
        """Share of replicas where |g_K - g_nu| <= max entry gap of G_K - G."""
        return float(np.mean(self.stieltjes_gaps <= self.entry_gaps + VANISHING_TOL))

    @property
    def direction_fraction(self):
        return float(np.mean(self.stieltjes_gaps <= self.direction_gaps + VANISHING_TOL))

    def quantiles(self, values):
        return {f"q{int(q * 100)}": float(np.quantile(values, q)) for q in (0.5, 0.9, 1.0)}

    def as_dict(self):
        return {
            'n': self.n,
            'stieltjes_gap': self.quantiles(self.stieltjes_gaps),
            'direction_gap': self.quantiles(self.direction_gaps),
            'entry_gap': self.quantiles(self.entry_gaps),
            'stieltjes_target': self.stieltjes_target,
            'entry_target': self.entry_target,
            'hierarchy_fraction': self.hierarchy_fraction,
            'direction_fraction': self.direction_fraction,
        }


def corollary_bounds(config, z, directions=None, threads=None):
    """
    Replica-wise |g_K - g_nu|, max over directions of |u'G_K u - u'Gu| and
    max_ij |G_K - G|_ij, with their target scales kappa sqrt(log n)/n and
    kappa sqrt(log n)/sqrt(n).
    """
    z = check_validity_region(z, config.n)
    population = population_for(config)
    solution = solve_fixed_point(population.model, z)
    G = population.equivalent_matrix(solution.c, z)
    g_reference = g_nu(population.model, solution, z)
    directions = default_directions(config.p, config.seed) if directions is None else directions
    for u in directions:
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise PreconditionError("directions must be unit vectors")

    def _replica(replica):
        view = _replica_view(config, replica, z)
        G_K = view.materialize()
        return (
            abs(view.stieltjes() - g_reference),
            max(abs(u @ G_K @ u - u @ G @ u) for u in directions),
            float(np.max(np.abs(G_K - G))),
        )

    results = np.array(run_parallel(_replica, range(config.replicas), threads), dtype=np.float64)
    log_factor = np.sqrt(np.log(config.n))
    return CorollaryReport(
        n=config.n,
        stieltjes_gaps=results[:, 0],
        direction_gaps=results[:, 1],
        entry_gaps=results[:, 2],
        stieltjes_target=float(kappa(z) * log_factor / config.n),
        entry_target=float(kappa(z) * log_factor / np.sqrt(config.n)),
    )


def stieltjes_variance_sweep(sweep, z, threads=None):
    """Var[g_K(z)] across replicas per n; expected to decay like n^-2."""
    z = check_validity_region(z, sweep.n_values[0])
    rows = []
    for n in sweep.n_values:
        config = sweep.run_config(n)
        values = np.array(run_parallel(
            lambda replica: _replica_view(config, replica, z).stieltjes(), range(config.replicas), threads,
        ))
        variance = float(np.mean(np.abs(values - values.mean()) ** 2) * config.replicas / (config.replicas - 1))
        rows.append(StatRow('var_g', n, variance, variance * np.sqrt(2.0 / (config.replicas - 1)),
                            kappa(z) ** 2 / n ** 2))
    rows = tuple(rows)
    return SweepResult('var_g', sweep.n_values, rows, fit_loglog(sweep.n_values, [row.value for row in rows]))


def _unit_frobenius_matrix(p, seed):
    generator = column_generator(seed, AUXILIARY_STREAM, p + 1)
    B = generator.standard_normal((p, p))
    return B / np.linalg.norm(B)


@dataclass(frozen=True)
class QuadraticFormReport:
    var_quadratic: float
    var_mixed: float
    var_sandwich: float
    p: int
    variance_scale: float
    eta: float

    @property
    def pattern_ratio(self):
        if self.var_mixed == 0:
            return float('nan')
        return self.var_quadratic / (self.p * self.var_mixed)

    @property
    def pattern_ok(self):
        ratio = self.pattern_ratio
        return bool(np.isnan(ratio) and self.var_quadratic == 0) or 0.1 <= ratio <= 10

    @property
    def mixed_ok(self):
        return self.var_mixed <= 10 * self.variance_scale

    @property
    def sandwich_ok(self):
        return self.var_sandwich <= 10 * self.eta ** 2 * self.variance_scale

    def as_dict(self):
        return {
            'var_quadratic': self.var_quadratic,
            'var_mixed': self.var_mixed,
            'var_sandwich': self.var_sandwich,
            'pattern_ratio': self.pattern_ratio,
            'pattern_ok': self.pattern_ok,
            'mixed_ok': self.mixed_ok,
            'sandwich_ok': self.sandwich_ok,
        }


def _complex_variance(values):
    values = np.asarray(values)
    return float(np.mean(np.abs(values - values.mean()) ** 2))


def quadratic_form_variances(config, z, B=None, threads=None):
    """
    Variances of x'G_x, x'BG_x and x'G_B G_x with x the first column and G_ its
    leave-one-out resolvent. B defaults to a seeded matrix with ||B||_F = 1.
    The variance scale is eta^2 (1 + eta^2 |z| / n).
    """
    z = as_spectral_parameter(z)
    B = _unit_frobenius_matrix(config.p, config.seed) if B is None else np.asarray(B)
    if B.shape != (config.p, config.p):
        raise PreconditionError(f"B must be {config.p}x{config.p}")

    def _replica(replica):
        X = sample_matrix(config, replica)
        x = X.column(0)
        rest = X.entries[:, 1:]
        G_minus = resolvent(rest @ rest.T / X.n, z)
        gx = G_minus @ x
        return x @ gx, x @ B @ gx, gx @ B @ gx

    values = np.array(run_parallel(_replica, range(config.replicas), threads))
    eta = z.eta
    return QuadraticFormReport(
        var_quadratic=_complex_variance(values[:, 0]),
        var_mixed=_complex_variance(values[:, 1]),
        var_sandwich=_complex_variance(values[:, 2]),
        p=config.p,
        variance_scale=float(eta ** 2 * (1 + eta ** 2 * abs(z.value) / config.n)),
        eta=eta,
    )


def loo_parameters(X, z):
    """
    a_j = z + (z/n) x_j' G_-j x_j for every column, via a_j = -1/Gc_jj and
    Gc_jj = ((1/n) x_j' G x_j - 1)/z, from one resolvent of K.
    """
    z = as_spectral_parameter(z)
    view = ResolventView.from_matrix(sample_covariance(X), z)
    projected = view.eigenvectors.T @ X.entries
    quadratic = (projected ** 2).T @ view.diagonal() / X.n
    return z.value / (1.0 - quadratic)


@dataclass(frozen=True)
class IntermediateReport:
    n: int
    b_hat: complex
    stderr: float
    c: complex
    omega_fraction: float

    @property
    def gap(self):
        return abs(self.b_hat - self.c)

    def as_dict(self):
        return {
            'n': self.n,
            'b_re': self.b_hat.real,
            'b_im': self.b_hat.imag,
            'c_re': self.c.real,
            'c_im': self.c.imag,
            'gap': self.gap,
            'stderr': self.stderr,
            'omega_fraction': self.omega_fraction,
        }


def intermediate_parameter_b(config, z, threads=None):
    """
    Monte Carlo estimate of b = E[a] = z + (z/n) Tr(Sigma E[G_]) next to the fixed point c.
    Averages a_j over all columns of every replica; reports the share of a_j inside Omega.
    """
    z = as_spectral_parameter(z)
    population = population_for(config)
    solution = solve_fixed_point(population.model, z)
    omega = OmegaDomain(z)

    per_replica = run_parallel(lambda replica: loo_parameters(sample_matrix(config, replica), z),
                               range(config.replicas), threads)
    means = np.array([values.mean() for values in per_replica])
    inside = np.concatenate([omega.contains_many(values, tol=1e-9) for values in per_replica])
    b_hat = complex(means.mean())
    if z.is_real:
        b_hat = complex(b_hat.real, 0.0)
    stderr = float(np.sqrt(_complex_variance(means) / max(1, config.replicas - 1)))
    return IntermediateReport(config.n, b_hat, stderr, solution.c, float(np.mean(inside)))


def intermediate_parameter_sweep(sweep, z, threads=None):
    """|b - c| per n; targets n^-1 |z|^-7/2 (real) or n^-1 eta^7 |z|^7/2 (complex)."""
    z = as_spectral_parameter(z)
    if z.is_real:
        scale = abs(z.value) ** -3.5
    else:
        scale = z.eta ** 7 * abs(z.value) ** 3.5
    rows = []
    reports = []
    for n in sweep.n_values:
        report = intermediate_parameter_b(sweep.run_config(n), z, threads)
        reports.append(report)
        rows.append(StatRow('b_gap', n, report.gap, report.stderr, scale / n))
        rows.append(StatRow('a_in_omega', n, report.omega_fraction))
    rows = tuple(rows)
    gaps = [row.value for row in rows if row.name == 'b_gap']
    return SweepResult('b_gap', sweep.n_values, rows, fit_loglog(sweep.n_values, gaps),
                       extra={'reports': reports})


@dataclass(frozen=True)
class KolmogorovPoint:
    n: int
    deltas: np.ndarray
    reduction_residual: float

    @property
    def mean(self):
        return float(np.mean(self.deltas))

    @property
    def stderr(self):
        if self.deltas.size < 2:
            return 0.0
        return float(np.std(self.deltas, ddof=1) / np.sqrt(self.deltas.size))


def kolmogorov_point(config, threads=None, grid_size=None):
    """
    Delta(mu_K, nu) for every replica at one n. For gamma > 1 the distance is
    also computed as Delta(mu_Kc, nu_check)/gamma and the largest disagreement
    between the two routes is reported.
    """
    population = population_for(config)
    model = population.model
    if not model.is_invertible or model.sigma_min < 0.1:
        raise PreconditionError(f"the Kolmogorov rate needs Sigma invertible with lambda_min >= 0.1, got {model.sigma_min}")
    result = free_multiplicative_mp(model, grid_size=grid_size, threads=threads)
    gamma = model.gamma
    check = nu_check_measure(result, gamma) if gamma > 1 else None

    def _replica(replica):
        X = sample_matrix(config, replica)
        delta = kolmogorov_distance(empirical_spectrum(sample_covariance(X)).cdf(), result.cdf)
        if check is None:
            return delta, 0.0
        reduced = kolmogorov_distance(empirical_spectrum(co_sample_covariance(X)).cdf(), check.cdf) / gamma
        return delta, abs(delta - reduced)

    values = np.array(run_parallel(_replica, range(config.replicas), threads), dtype=np.float64)
    return KolmogorovPoint(config.n, values[:, 0], float(np.max(values[:, 1])))


@dataclass(frozen=True)
class KolmogorovRateReport:
    sweep: SweepResult
    points: tuple
    threshold: float = 0.05

    @property
    def decays(self):
        return self.points[-1].mean < self.points[0].mean

    @property
    def threshold_ok(self):
        """Delta <= 0.05 once n reaches 1024; vacuous for smaller sweeps."""
        last = self.points[-1]
        return last.n < 1024 or last.mean <= self.threshold

    @property
    def reduction_residual(self):
        return max(point.reduction_residual for point in self.points)


def kolmogorov_rate(sweep, threads=None, grid_size=None):
    """
    Delta(mu_K, nu) per n with the n^-1/70 curve as the (constant-free) bound.
    """
    points = []
    rows = []
    for n in sweep.n_values:
        point = kolmogorov_point(sweep.run_config(n), threads, grid_size)
        points.append(point)
        rows.append(StatRow('kolmogorov', n, point.mean, point.stderr, float(n ** -KOLMOGOROV_RATE)))
        logger.info(f"Kolmogorov distance n={n}: {point.mean:.4e} (+/- {point.stderr:.1e})")
    rows = tuple(rows)
    fit = fit_loglog(sweep.n_values, [row.value for row in rows])
    return KolmogorovRateReport(SweepResult('kolmogorov', sweep.n_values, rows, fit), tuple(points))


def kolmogorov_universality(sweep, threads=None, grid_size=None, factor=2.0):
    """
    Gaussian against Rademacher columns at matched (n, gamma).

    Returns:
        dict: both reports and whether every Rademacher distance is within
        `factor` of the Gaussian one (and vice versa)
    """
    gaussian = kolmogorov_rate(sweep.with_kind(ColumnKind.GAUSSIAN_LINEAR), threads, grid_size)
    rademacher = kolmogorov_rate(sweep.with_kind(ColumnKind.RADEMACHER_LINEAR), threads, grid_size)
    ratios = [r.mean / g.mean for g, r in zip(gaussian.points, rademacher.points) if g.mean > 0]
    within = all(1 / factor <= ratio <= factor for ratio in ratios)
    return {'gaussian': gaussian, 'rademacher': rademacher, 'ratios': ratios, 'within': within}


@dataclass(frozen=True)
class TraceFunctionalReport:
    n: int
    gaps: np.ndarray
    variance: float
    target: float

    def as_dict(self):
        return {
            'n': self.n,
            'gap_q50': float(np.quantile(self.gaps, 0.5)),
            'gap_q90': float(np.quantile(self.gaps, 0.9)),
            'variance': self.variance,
            'target': self.target,
        }


def trace_functional_gap(config, z, A=None, threads=None):
    """|Tr(G_K A - G A)| / ||A||_F per replica and Var[Tr(G_K A)], A seeded with ||A||_F = 1 by default."""
    z = check_validity_region(z, config.n)
    A = _unit_frobenius_matrix(config.p, config.seed) if A is None else np.asarray(A)
    norm_a = np.linalg.norm(A)
    if norm_a == 0:
        raise PreconditionError("A must be nonzero")
    population = population_for(config)
    solution = solve_fixed_point(population.model, z)
    reference = np.sum(population.equivalent_matrix(solution.c, z) * A.T)

    traces = np.array(run_parallel(
        lambda replica: np.sum(_replica_view(config, replica, z).materialize() * A.T),
        range(config.replicas), threads,
    ))
    return TraceFunctionalReport(
        n=config.n,
        gaps=np.abs(traces - reference) / norm_a,
        variance=_complex_variance(traces) / norm_a ** 2,
        target=float(kappa(z) * np.sqrt(np.log(config.n) / config.n)),
    )


@dataclass(frozen=True)
class ConcentrationReport:
    std: float
    scale: float
    tau_scale: float

    @property
    def ratio(self):
        return self.std / self.scale if self.scale else float('nan')

    @property
    def passed(self):
        return self.std <= 10 * self.scale


def concentration_check(config, z, threads=None):
    """
    Replica spread of the 1-Lipschitz observable Re Tr(G_K A) / ||A||_F next to
    eta^2 |z|^1/2 / sqrt(n). Soft check: a miss is logged, not raised.
    """
    z = as_spectral_parameter(z)
    A = _unit_frobenius_matrix(config.p, config.seed)
    values = np.array(run_parallel(
        lambda replica: float(np.real(np.sum(_replica_view(config, replica, z).materialize() * A.T))),
        range(config.replicas), threads,
    ))
    scales = concentration_scale(z, config.n)
    report = ConcentrationReport(float(np.std(values, ddof=1)), scales['lipschitz_scale'], scales['tau_scale'])
    if not report.passed:
        logger.warning(f"Observable spread {report.std:.3e} exceeds 10x the concentration scale {report.scale:.3e}")
    return report
