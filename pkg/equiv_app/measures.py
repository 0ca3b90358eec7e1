"""
Probability measures on the nonnegative reals.

Atomic measures (empirical spectra, population spectra), sampled densities
(recovered free convolutions), their CDFs and Stieltjes transforms, the
Kolmogorov distance between CDFs and the bound evaluators used to turn a
Stieltjes-transform gap into a Kolmogorov-distance certificate.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.optimize

from equiv_app.errors import DimensionError, InapplicableBoundError, PreconditionError
from equiv_app.resolvents import as_spectral_parameter, symmetric_eigh
from equiv_app.utils import read_csv, write_csv

logger = logging.getLogger(__name__)

MERGE_TOL = 1e-10
ZERO_SNAP_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12
MASS_TOL = 5e-3
DENSITY_FLOOR = -1e-12
KOLMOGOROV_ACCURACY = 1e-6
SMOOTHING_SLOPE = np.tan(3 * np.pi / 8)


def _merge_atoms(positions, weights):
    order = np.argsort(positions, kind='stable')
    positions = positions[order]
    weights = weights[order]
    merged_positions = []
    merged_weights = []
    for position, weight in zip(positions, weights):
        if merged_positions and position - merged_positions[-1] < MERGE_TOL:
            merged_weights[-1] += weight
        else:
            merged_positions.append(position)
            merged_weights.append(weight)
    return np.array(merged_positions), np.array(merged_weights)


@dataclass(frozen=True)
class AtomicMeasure:
    """
    Finitely supported probability measure on [0, inf).

    Atoms closer than 1e-10 are merged; positions end up strictly ascending.
    """
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.atleast_1d(np.asarray(self.positions, dtype=np.float64))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if positions.shape != weights.shape or positions.ndim != 1:
            raise DimensionError("positions and weights must be 1-D arrays of equal length")
        if positions.size == 0:
            raise PreconditionError("atomic measure needs at least one atom")
        if not np.all(np.isfinite(positions)) or np.any(positions < 0):
            raise PreconditionError("atom positions must be finite and nonnegative")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise PreconditionError("atom weights must be positive")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise PreconditionError(f"atom weights sum to {weights.sum():.15g}, not 1")
        positions, weights = _merge_atoms(positions, weights)
        positions.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def from_atoms(cls, positions, weights, atom_at_zero=0.0):
        """Build from atoms plus an optional extra mass at 0, merged canonically."""
        positions = list(np.atleast_1d(positions))
        weights = list(np.atleast_1d(weights))
        if atom_at_zero > 0:
            positions.append(0.0)
            weights.append(atom_at_zero)
        return cls(np.array(positions, dtype=np.float64), np.array(weights, dtype=np.float64))

    @classmethod
    def dirac(cls, position):
        return cls(np.array([float(position)]), np.array([1.0]))

    @property
    def atom_at_zero(self):
        return float(self.weights[0]) if self.positions[0] == 0.0 else 0.0

    def mean(self):
        return float(np.dot(self.positions, self.weights))

    def second_moment(self):
        return float(np.dot(self.positions ** 2, self.weights))

    def stieltjes(self, z):
        return stieltjes(self, z)

    def cdf(self):
        return CdfFunction(jump_positions=self.positions, jump_weights=self.weights)

    def to_csv(self, path):
        return write_csv(path, {'t': self.positions, 'w': self.weights})

    @classmethod
    def from_csv(cls, path):
        frame = read_csv(path, required_columns=('t', 'w'))
        weights = frame['w'].to_numpy(dtype=np.float64)
        # %.12g output loses the last digits of the weights
        return cls(frame['t'].to_numpy(dtype=np.float64), weights / weights.sum())


@dataclass(frozen=True)
class SampledDensity:
    """
    Continuous density on a grid plus an atom at zero.

    The density is piecewise linear between grid points.
    """
    grid: np.ndarray
    values: np.ndarray
    atom_at_zero: float = 0.0
    total_mass: float = field(init=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise DimensionError("density grid and values must be matching 1-D arrays of length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise PreconditionError("density grid must be strictly ascending")
        if np.min(values) < DENSITY_FLOOR:
            raise PreconditionError(f"density has negative values down to {np.min(values):.3e}")
        values = np.clip(values, 0.0, None)
        atom = float(self.atom_at_zero)
        if atom < 0:
            raise PreconditionError("atom at zero must be nonnegative")
        total = atom + float(scipy.integrate.trapezoid(values, grid))
        if abs(total - 1.0) > MASS_TOL:
            raise PreconditionError(f"density mass {total:.6f} is not 1 within {MASS_TOL}")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'grid', grid)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'atom_at_zero', atom)
        object.__setattr__(self, 'total_mass', total)

    def cumulative(self):
        return scipy.integrate.cumulative_trapezoid(self.values, self.grid, initial=0.0)

    def cdf(self):
        jumps = np.array([0.0]) if self.atom_at_zero > 0 else np.array([])
        weights = np.array([self.atom_at_zero]) if self.atom_at_zero > 0 else np.array([])
        return CdfFunction(
            jump_positions=jumps, jump_weights=weights,
            knots=self.grid, knot_values=self.cumulative(),
        )

    def stieltjes(self, z):
        """
        Exact transform of the piecewise-linear density plus the atom.

        On each cell f = f0 + s(x - x0), so the integral of f/(x - z) is
        (f0 + s(z - x0)) log((x1 - z)/(x0 - z)) + s(x1 - x0).
        """
        z = as_spectral_parameter(z).value
        x0, x1 = self.grid[:-1], self.grid[1:]
        f0, f1 = self.values[:-1], self.values[1:]
        slope = (f1 - f0) / (x1 - x0)
        # x - z never crosses the branch cut of log for a valid z
        logs = np.log(x1 - z) - np.log(x0 - z)
        continuous = np.sum((f0 + slope * (z - x0)) * logs + slope * (x1 - x0))
        return complex(continuous + self.atom_at_zero / (-z))

    def to_csv(self, path):
        atom_column = [self.atom_at_zero] + [None] * (self.grid.size - 1)
        return write_csv(path, {'x': self.grid, 'f': self.values, 'atom0': atom_column})

    @classmethod
    def from_csv(cls, path):
        frame = read_csv(path, required_columns=('x', 'f', 'atom0'))
        atom = frame['atom0'].iloc[0]
        return cls(
            frame['x'].to_numpy(dtype=np.float64),
            frame['f'].to_numpy(dtype=np.float64),
            0.0 if np.isnan(atom) else float(atom),
        )


@dataclass(frozen=True)
class CdfFunction:
    """
    Right-continuous CDF: jumps plus a continuous part given by knots.

    The continuous part is interpolated linearly between knots, is 0 left of
    the first knot and constant right of the last.
    """
    jump_positions: np.ndarray = field(default_factory=lambda: np.array([]))
    jump_weights: np.ndarray = field(default_factory=lambda: np.array([]))
    knots: np.ndarray = field(default_factory=lambda: np.array([]))
    knot_values: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        jumps = np.asarray(self.jump_positions, dtype=np.float64).ravel()
        weights = np.asarray(self.jump_weights, dtype=np.float64).ravel()
        knots = np.asarray(self.knots, dtype=np.float64).ravel()
        values = np.asarray(self.knot_values, dtype=np.float64).ravel()
        if jumps.shape != weights.shape or knots.shape != values.shape:
            raise DimensionError("CDF jump and knot arrays must pair up")
        if jumps.size == 0 and knots.size == 0:
            raise PreconditionError("CDF of an empty measure")
        if jumps.size:
            jumps, weights = _merge_atoms(jumps, weights)
            if np.min(weights) < -WEIGHT_SUM_TOL:
                raise PreconditionError("CDF has a negative jump")
            weights = np.clip(weights, 0.0, None)
        if knots.size:
            if np.any(np.diff(knots) <= 0):
                raise PreconditionError("CDF knots must be strictly ascending")
            if values[0] < -WEIGHT_SUM_TOL or np.any(np.diff(values) < -WEIGHT_SUM_TOL):
                raise PreconditionError("CDF continuous part must be nondecreasing from 0")
        total = weights.sum() + (values[-1] if values.size else 0.0)
        if abs(total - 1.0) > MASS_TOL:
            raise PreconditionError(f"CDF does not reach 1 (total mass {total:.6f})")
        for name, array in (('jump_positions', jumps), ('jump_weights', weights),
                            ('knots', knots), ('knot_values', values)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def is_step(self):
        return self.knots.size == 0

    def _continuous(self, t):
        if self.knots.size == 0:
            return np.zeros_like(t)
        return np.interp(t, self.knots, self.knot_values, left=0.0, right=self.knot_values[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        cumulative = np.concatenate([[0.0], np.cumsum(self.jump_weights)])
        index = np.searchsorted(self.jump_positions, t, side='right')
        return cumulative[index] + self._continuous(t)

    def left_limit(self, t):
        t = np.asarray(t, dtype=np.float64)
        cumulative = np.concatenate([[0.0], np.cumsum(self.jump_weights)])
        index = np.searchsorted(self.jump_positions, t, side='left')
        return cumulative[index] + self._continuous(t)

    def breakpoints(self):
        return np.union1d(self.jump_positions, self.knots)

    def to_csv(self, path, grid=None):
        grid = self.breakpoints() if grid is None else np.asarray(grid)
        return write_csv(path, {'x': grid, 'F': self(grid)})


def stieltjes(mu, z):
    """
    Stieltjes transform of an atomic measure.

    Args:
        mu: AtomicMeasure
        z: spectral parameter (value or SpectralParameter)

    Returns:
        complex: sum_i w_i / (t_i - z)
    """
    z = as_spectral_parameter(z).value
    return complex(np.sum(mu.weights / (mu.positions - z)))


def empirical_spectrum(K):
    """ESD of a symmetric PSD matrix: atoms at the eigenvalues with weight 1/p."""
    eigenvalues, _ = symmetric_eigh(K)
    return spectrum_measure(eigenvalues)


def spectrum_measure(eigenvalues):
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    if eigenvalues.size == 0:
        raise PreconditionError("empty spectrum")
    eigenvalues = np.where(eigenvalues < ZERO_SNAP_TOL, 0.0, eigenvalues)
    return AtomicMeasure(eigenvalues, np.full(eigenvalues.size, 1.0 / eigenvalues.size))


def _gap_at(F1, F2, t):
    return np.maximum(np.abs(F1(t) - F2(t)), np.abs(F1.left_limit(t) - F2.left_limit(t)))


def kolmogorov_distance(F1, F2, refine_intervals=8):
    """
    sup_t |F1(t) - F2(t)|.

    Exact over jump points for two step functions. Otherwise the gap is
    evaluated at every breakpoint (value and left limit), then the most
    promising cells are refined with a bounded golden-section search.
    """
    if not isinstance(F1, CdfFunction) or not isinstance(F2, CdfFunction):
        raise PreconditionError("kolmogorov_distance expects two CdfFunction values")
    points = np.union1d(F1.breakpoints(), F2.breakpoints())
    gaps = _gap_at(F1, F2, points)
    best = float(np.max(gaps)) if gaps.size else 0.0
    if F1.is_step and F2.is_step:
        return best

    if points.size >= 2:
        cells = np.argsort(np.maximum(gaps[:-1], gaps[1:]))[::-1][:refine_intervals]
        for cell in cells:
            lo, hi = points[cell], points[cell + 1]
            result = scipy.optimize.minimize_scalar(
                lambda t: -float(np.abs(F1(t) - F2(t))),
                bounds=(lo, hi), method='bounded',
                options={'xatol': KOLMOGOROV_ACCURACY},
            )
            best = max(best, -float(result.fun))
    return best


@dataclass(frozen=True)
class KolmogorovSchedule:
    """
    Balancing schedule (y, A) for turning a Stieltjes gap into a Kolmogorov bound.

    y and A are chosen so that eps A^(1+l) / y^k, sigma^3 / (y^2 A) and
    y^beta coincide.
    """
    beta: float
    l: float
    k: float
    sigma: float
    epsilon: float
    y: float = field(init=False)
    A: float = field(init=False)

    relative_tol = 1e-9

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise InapplicableBoundError(f"Hölder exponent must lie in (0, 1], got {self.beta}")
        if self.l <= 0 or self.k <= 0:
            raise InapplicableBoundError("schedule exponents l and k must be positive")
        if self.sigma < 1:
            raise InapplicableBoundError(f"second-moment bound sigma must be >= 1, got {self.sigma}")
        if self.epsilon <= 0:
            raise InapplicableBoundError("rate epsilon must be positive")
        exponent = 2 + 2 * self.l + self.k + (2 + self.l) * self.beta
        y = (self.sigma ** (3 * (1 + self.l)) * self.epsilon) ** (1.0 / exponent)
        A = (self.sigma ** 3 / self.epsilon) ** (1.0 / (2 + self.l)) * y ** ((self.k - 2) / (2 + self.l))
        object.__setattr__(self, 'y', float(y))
        object.__setattr__(self, 'A', float(A))
        terms = self.terms()
        spread = (max(terms) - min(terms)) / max(terms)
        if spread > self.relative_tol:
            raise InapplicableBoundError(f"schedule terms disagree (relative spread {spread:.3e})")

    def terms(self):
        return (
            self.epsilon * self.A ** (1 + self.l) / self.y ** self.k,
            self.sigma ** 3 / (self.y ** 2 * self.A),
            self.y ** self.beta,
        )


@dataclass(frozen=True)
class BaiBoundReport:
    transform_term: float
    tail_term: float
    smoothing_term: float
    constant: str = "C'"

    @property
    def certificate(self):
        # constant-free: the unknown C' is taken as 1
        return self.transform_term + self.tail_term + self.smoothing_term

    def as_dict(self):
        return {
            'transform_term': self.transform_term,
            'tail_term': self.tail_term,
            'smoothing_term': self.smoothing_term,
            'certificate': self.certificate,
            'constant': self.constant,
        }


def bai_bound_terms(g_gap, schedule, points=2001):
    """
    Three-term Kolmogorov certificate.

    Args:
        g_gap: callable w -> |g_nu(w) - g_mu(w)|, evaluated at w = t + iy
        schedule: KolmogorovSchedule fixing y and A
        points: number of t values sampled on [-A, A]

    Returns:
        BaiBoundReport: (A max|g_gap|, sigma^3/(y^2 A), y^beta)
    """
    if not isinstance(schedule, KolmogorovSchedule):
        raise InapplicableBoundError("bai_bound_terms needs a KolmogorovSchedule")
    ts = np.linspace(-schedule.A, schedule.A, points)
    gap = max(abs(g_gap(complex(t, schedule.y))) for t in ts)
    return BaiBoundReport(
        transform_term=float(schedule.A * gap),
        tail_term=float(schedule.sigma ** 3 / (schedule.y ** 2 * schedule.A)),
        smoothing_term=float(schedule.y ** schedule.beta),
    )


def mp_shape_distance_bound(gamma1, gamma2):
    """Kolmogorov distance bound |g - g'| / max(g, g') between two MP shapes."""
    if gamma1 <= 0 or gamma2 <= 0:
        raise PreconditionError(f"shape parameters must be positive, got {gamma1}, {gamma2}")
    return abs(gamma1 - gamma2) / max(gamma1, gamma2)


def kolmogorov_rate_exponent(beta, l, k):
    if not 0 < beta <= 1 or l <= 0 or k <= 0:
        raise InapplicableBoundError("rate exponent needs beta in (0, 1] and positive l, k")
    return beta / (2 + 2 * l + k + (2 + l) * beta)


def _transform_at(measure, w):
    if isinstance(measure, AtomicMeasure):
        return complex(np.sum(measure.weights / (measure.positions - w)))
    return measure.stieltjes(w)


def tail_stieltjes_integral(mu, nu, y, A):
    """
    Integral of |g_nu - g_mu|(t + iy) over |t| > A, next to the bound 4 sigma^3/(y^2 A).

    sigma is the larger second moment, floored at 1.

    Returns:
        tuple: (integral, bound)
    """
    if not 0 < y < 1:
        raise InapplicableBoundError(f"height y must lie in (0, 1), got {y}")
    if A <= 0:
        raise InapplicableBoundError("cutoff A must be positive")
    sigma = max(1.0, _second_moment(mu), _second_moment(nu))

    def integrand(t):
        w = complex(t, y)
        return abs(_transform_at(nu, w) - _transform_at(mu, w))

    right, _ = scipy.integrate.quad(integrand, A, np.inf, limit=200)
    left, _ = scipy.integrate.quad(integrand, -np.inf, -A, limit=200)
    return float(left + right), float(4 * sigma ** 3 / (y ** 2 * A))


def _second_moment(measure):
    if isinstance(measure, AtomicMeasure):
        return measure.second_moment()
    moment = scipy.integrate.trapezoid(measure.values * measure.grid ** 2, measure.grid)
    return float(moment)


def cdf_smoothing_term(cdf, y, points=401, quadrature_points=201):
    """
    (1/y) sup_x of the integral of |F(x + t) - F(x)| over |t| <= 2y tan(3pi/8).

    The sup runs over a grid spanning the CDF's breakpoints plus the window.
    """
    if y <= 0:
        raise InapplicableBoundError("smoothing height must be positive")
    half_width = 2 * y * SMOOTHING_SLOPE
    breaks = cdf.breakpoints()
    xs = np.linspace(breaks[0] - half_width, breaks[-1] + half_width, points)
    xs = np.union1d(xs, breaks)
    ts = np.linspace(-half_width, half_width, quadrature_points)
    best = 0.0
    for x in xs:
        integral = scipy.integrate.trapezoid(np.abs(cdf(x + ts) - cdf(x)), ts)
        best = max(best, float(integral))
    return best / y


def limit_distance_budget(delta_sigma, gamma_n, gamma_inf, rate_term):
    """Distance budget to the limiting law: population drift + shape drift + finite-n rate."""
    if delta_sigma < 0 or rate_term < 0:
        raise PreconditionError("distance terms must be nonnegative")
    return float(delta_sigma + mp_shape_distance_bound(gamma_n, gamma_inf) + rate_term)
