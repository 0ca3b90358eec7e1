"""
Deterministic equivalent of a sample-covariance resolvent.

For a population spectrum Sigma and aspect ratio gamma = p/n, the functional

    F(l) = z + (z/n) Tr(G^l Sigma),   G^l = ((z/l) Sigma - zI)^-1

has a unique fixed point c on the domain Omega, and G(z) = G^c is the
deterministic equivalent of E[(K - zI)^-1]. F only sees the spectrum of
Sigma, and the spectrum is kept compressed to its distinct values with
multiplicity weights, so one evaluation costs O(#distinct eigenvalues).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from django.core.cache import cache

from equiv_app.errors import (
    ConsistencyError, DimensionError, DomainError, InapplicableBoundError,
    NonConvergenceError, NumericError, PreconditionError,
)
from equiv_app.resolvents import Branch, SpectralParameter, as_spectral_parameter
from equiv_app.utils import get_stable_hash

logger = logging.getLogger(__name__)

OMEGA_TOL = 1e-12
CONSISTENCY_TOL = 1e-10
DIVERGENCE_PATIENCE = 50
DAMPING = 0.5
RATIO_WINDOW = 5


@dataclass(frozen=True)
class CovarianceModel:
    """
    Population description: eigenvalues of Sigma, gamma = p/n and a bound on ||E[x]||.

    Eigenvalues are stored in descending order. `atoms` and `atom_weights`
    hold the distinct eigenvalues and their multiplicity fractions.
    """
    sigma_eigenvalues: np.ndarray
    gamma: float
    mean_norm: float = 0.0
    atoms: np.ndarray = field(init=False, repr=False)
    atom_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        eigenvalues = np.atleast_1d(np.asarray(self.sigma_eigenvalues, dtype=np.float64))
        if eigenvalues.ndim != 1 or eigenvalues.size == 0:
            raise DimensionError("sigma eigenvalues must be a non-empty 1-D array")
        if not np.all(np.isfinite(eigenvalues)) or np.any(eigenvalues < 0):
            raise PreconditionError("sigma eigenvalues must be finite and nonnegative")
        if not self.gamma > 0 or not np.isfinite(self.gamma):
            raise PreconditionError(f"gamma must be positive, got {self.gamma}")
        if self.mean_norm < 0:
            raise PreconditionError("mean norm bound must be nonnegative")
        eigenvalues = np.sort(eigenvalues)[::-1].copy()
        atoms, counts = np.unique(eigenvalues, return_counts=True)
        eigenvalues.setflags(write=False)
        object.__setattr__(self, 'sigma_eigenvalues', eigenvalues)
        object.__setattr__(self, 'gamma', float(self.gamma))
        object.__setattr__(self, 'mean_norm', float(self.mean_norm))
        object.__setattr__(self, 'atoms', atoms)
        object.__setattr__(self, 'atom_weights', counts / eigenvalues.size)

    @property
    def p(self):
        return self.sigma_eigenvalues.size

    @property
    def n(self):
        return self.p / self.gamma

    @property
    def sigma_spectral_norm(self):
        return float(self.sigma_eigenvalues[0])

    @property
    def sigma_min(self):
        return float(self.sigma_eigenvalues[-1])

    @property
    def is_invertible(self):
        return self.sigma_min > 0

    @property
    def key(self):
        return get_stable_hash(self.atoms, self.atom_weights, self.gamma)


@dataclass(frozen=True)
class OmegaDomain:
    """
    Domain of F: (-inf, z] on the real branch, and
    {Im l >= Im z, Im(l/z) >= 0} in the upper half-plane.
    """
    z: SpectralParameter

    def contains(self, l, tol=OMEGA_TOL):
        return bool(np.all(self.contains_many(np.atleast_1d(l), tol)))

    def contains_many(self, ls, tol=OMEGA_TOL):
        ls = np.asarray(ls, dtype=np.complex128)
        z = self.z.value
        scale = max(1.0, abs(z))
        if self.z.branch == Branch.REAL_NEGATIVE:
            return (np.abs(ls.imag) <= tol * scale) & (ls.real <= z.real + tol * scale)
        return (ls.imag >= z.imag - tol * scale) & ((ls / z).imag >= -tol)

    def sample(self, rng, size):
        """Random points of Omega by rejection from a box around z."""
        z = self.z.value
        radius = 5 * abs(z) + 5
        if self.z.is_real:
            return z.real - rng.exponential(radius, size=size) + 0j
        points = []
        while len(points) < size:
            candidates = (rng.uniform(z.real - radius, z.real + radius, size=4 * size)
                          + 1j * rng.uniform(z.imag, z.imag + radius, size=4 * size))
            points.extend(candidates[self.contains_many(candidates, tol=0.0)].tolist())
        return np.array(points[:size])


@dataclass(frozen=True)
class FixedPointSolution:
    c: complex
    residual: float
    iterations: int
    contraction_estimate: float
    kF_theoretical: float
    z: SpectralParameter
    model_key: str
    damped: bool = False

    @property
    def g_nu_check(self):
        return -1.0 / self.c

    def as_dict(self):
        return {
            'c_re': self.c.real,
            'c_im': self.c.imag,
            'residual': self.residual,
            'iterations': self.iterations,
            'contraction_estimate': self.contraction_estimate,
            'kF': self.kF_theoretical,
            'damped': self.damped,
        }


@dataclass(frozen=True)
class BatchSolution:
    zs: np.ndarray
    c: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray


def _F_values(model, ls, z):
    ls = np.asarray(ls, dtype=np.complex128)
    atoms = model.atoms
    ratio = atoms[None, :] * ls.reshape(-1, 1) / (atoms[None, :] - ls.reshape(-1, 1))
    return (np.asarray(z).reshape(-1) + model.gamma * (ratio @ model.atom_weights)).reshape(ls.shape)


def _F_derivative(model, ls):
    ls = np.asarray(ls, dtype=np.complex128)
    atoms = model.atoms
    terms = atoms[None, :] ** 2 / (atoms[None, :] - ls.reshape(-1, 1)) ** 2
    return (model.gamma * (terms @ model.atom_weights)).reshape(ls.shape)


def _in_omega(ls, zv, real_mask, tol=1e-10):
    scale = np.maximum(1.0, np.abs(zv))
    real_ok = (np.abs(ls.imag) <= tol * scale) & (ls.real <= zv.real + tol * scale)
    with np.errstate(divide='ignore', invalid='ignore'):
        complex_ok = (ls.imag >= zv.imag - tol * scale) & ((ls / zv).imag >= -tol)
    return np.where(real_mask, real_ok, complex_ok)


def functional_F(model, l, z):
    """
    Evaluate F(l) = z + (z/n) Tr(G^l Sigma).

    Args:
        model: CovarianceModel
        l: point of Omega
        z: spectral parameter

    Returns:
        complex: F(l), again a point of Omega
    """
    z = as_spectral_parameter(z)
    omega = OmegaDomain(z)
    l = complex(l)
    if not omega.contains(l):
        raise DomainError(f"l={l} is not in the domain of F at z={z}")
    value = complex(_F_values(model, np.array([l]), z.value)[0])
    if not omega.contains(value, tol=1e-10):
        logger.error(f"F left its domain: F({l})={value} at z={z}")
        raise NumericError(f"F({l}) = {value} left the domain at z={z}")
    if z.is_real:
        value = complex(value.real, 0.0)
        lower = z.value.real - model.gamma * model.sigma_spectral_norm
        if not lower - 1e-10 * max(1.0, abs(lower)) <= value.real <= z.value.real:
            raise NumericError(f"F({l}) = {value.real} outside [{lower}, {z.value.real}]")
    return value


def contraction_constant(model, z):
    """
    Lipschitz factor of F around its fixed point.

    Real branch gamma/((1+|z|)(gamma+|z|)), complex branch (semi-metric d)
    gamma|z|eta^2/(1+gamma|z|eta^2), both stated for ||Sigma|| = 1. F at
    (Sigma, z) is F at (Sigma/s, z/s) scaled by s, and both metrics are scale
    free, so a general spectrum is handled by evaluating at z/s with s = ||Sigma||.
    """
    z = as_spectral_parameter(z)
    s = model.sigma_spectral_norm
    if s == 0:
        return 0.0
    gamma = model.gamma
    modulus = abs(z.value) / s
    if z.is_real:
        return gamma / ((1 + modulus) * (gamma + modulus))
    eta = z.eta * s
    scaled = gamma * modulus * eta ** 2
    return scaled / (1 + scaled)


def semi_metric(w1, w2):
    """d(w1, w2) = |w1 - w2| / sqrt(Im w1 Im w2) on the upper half-plane."""
    w1 = complex(w1)
    w2 = complex(w2)
    if w1.imag <= 0 or w2.imag <= 0:
        raise PreconditionError(f"semi-metric needs points in the upper half-plane, got {w1}, {w2}")
    return abs(w1 - w2) / np.sqrt(w1.imag * w2.imag)


def stability_gap_bound(kF, delta, step_norm):
    """Bound on |c - b| from |F(b) - b| when kF(1 + delta) < 1."""
    factor = kF * (1 + delta)
    if factor >= 1:
        raise InapplicableBoundError(f"stability bound needs kF(1+delta) < 1, got {factor}")
    return step_norm / (1 - factor)


def fixed_point_bracket(model, z):
    """Real branch only: c lies in [z - gamma ||Sigma||, z], i.e. 1 <= c/z <= 1 + gamma/|z| for ||Sigma|| = 1."""
    z = as_spectral_parameter(z)
    if not z.is_real:
        raise PreconditionError("the fixed-point bracket is defined on the real branch only")
    return z.value.real - model.gamma * model.sigma_spectral_norm, z.value.real


def closed_form_identity_c(gamma, z):
    """
    Fixed point for Sigma = I: the root of c^2 - c(1 + z - gamma) + z = 0 lying in Omega.
    """
    z = as_spectral_parameter(z)
    roots = np.roots([1.0, -(1.0 + z.value - gamma), z.value])
    omega = OmegaDomain(z)
    inside = [complex(root) for root in roots if omega.contains(root, tol=1e-9)]
    if not inside:
        raise NumericError(f"no root of the identity-model quadratic lies in the domain at z={z}")
    c = inside[0]
    return complex(c.real, 0.0) if z.is_real else c


def _step_size(z, previous, current):
    if z.is_real:
        return abs(current - previous)
    return semi_metric(current, previous) if previous.imag > 0 and current.imag > 0 else abs(current - previous)


def solve_fixed_point(model, z, tol=None, max_iter=None, start=None, use_cache=True):
    """
    Picard iteration l <- F(l) from l = z (or `start`) to the unique fixed point c.

    Iterates stay in Omega by the range property of F. A damped step
    l <- (1-s) l + s F(l) with s = 0.5 takes over only if the step size keeps
    growing, which does not happen for a valid model.

    Args:
        model: CovarianceModel
        z: spectral parameter
        tol: relative tolerance on |F(c) - c| (SPEQ_SOLVER_TOL by default)
        max_iter: iteration cap (SPEQ_SOLVER_MAX_ITER by default)
        start: optional starting point in Omega
        use_cache: memoize the solve in the Django cache

    Returns:
        FixedPointSolution
    """
    z = as_spectral_parameter(z)
    tol = settings.SPEQ_SOLVER_TOL if tol is None else float(tol)
    max_iter = settings.SPEQ_SOLVER_MAX_ITER if max_iter is None else int(max_iter)
    omega = OmegaDomain(z)

    cache_key = None
    if use_cache and start is None:
        cache_key = f"speq_fixed_point_{get_stable_hash(model.key, z.value, tol, max_iter)}"
        cached = cache.get(cache_key)
        if cached:
            return cached

    current = complex(z.value if start is None else start)
    if not omega.contains(current):
        raise DomainError(f"starting point {current} is not in the domain at z={z}")

    kF = contraction_constant(model, z)
    ratios = []
    previous_step = None
    growth = 0
    damped = False
    for iteration in range(1, max_iter + 1):
        mapped = complex(_F_values(model, np.array([current]), z.value)[0])
        if z.is_real:
            mapped = complex(mapped.real, 0.0)
        if not np.isfinite(mapped.real) or not np.isfinite(mapped.imag):
            raise NonConvergenceError(
                f"fixed-point iteration produced a non-finite value at z={z}",
                last_iterate=current, residual=float('inf'), iterations=iteration,
            )
        if abs(mapped - current) <= tol * max(1.0, abs(mapped)):
            current = mapped
            break

        candidate = (1 - DAMPING) * current + DAMPING * mapped if damped else mapped
        if not omega.contains(candidate, tol=1e-10):
            logger.error(f"Picard iterate {candidate} left the domain at z={z}")
            raise NumericError(f"fixed-point iterate {candidate} left the domain at z={z}")

        step = _step_size(z, current, mapped)
        if previous_step:
            ratios.append(step / previous_step)
            growth = growth + 1 if step > previous_step else 0
        previous_step = step
        current = candidate

        if growth >= DIVERGENCE_PATIENCE and not damped:
            logger.warning(f"Picard steps grew {growth} times in a row at z={z}; switching to damped iteration")
            damped = True
            growth = 0
    else:
        residual = abs(complex(_F_values(model, np.array([current]), z.value)[0]) - current)
        logger.error(f"Fixed point did not converge at z={z} after {max_iter} iterations (residual {residual:.3e})")
        raise NonConvergenceError(
            f"fixed point did not converge at z={z} within {max_iter} iterations",
            last_iterate=current, residual=residual, iterations=max_iter,
        )

    if z.is_real:
        current = complex(current.real, 0.0)
    residual = abs(complex(_F_values(model, np.array([current]), z.value)[0]) - current)
    window = [ratio for ratio in ratios[-RATIO_WINDOW:] if np.isfinite(ratio) and ratio > 0]
    estimate = float(np.exp(np.mean(np.log(window)))) if window else 0.0

    solution = FixedPointSolution(
        c=current, residual=float(residual), iterations=iteration,
        contraction_estimate=estimate, kF_theoretical=kF,
        z=z, model_key=model.key, damped=damped,
    )
    logger.debug(f"Solved fixed point at z={z}: c={current:.12g} in {iteration} iterations")
    if cache_key:
        cache.set(cache_key, solution, settings.SPEQ_SOLVER_CACHE_TIMEOUT)
    return solution


def solve_fixed_point_batch(model, zs, tol=None, max_iter=None, newton_after=500):
    """
    Vectorized fixed-point solve over many spectral parameters.

    Every point runs Picard steps. Points still unconverged after
    `newton_after` sweeps (near spectral edges, where F'(c) approaches the unit
    circle) switch to Newton steps on F(l) - l, accepted only when they stay
    in Omega and reduce the residual; the fixed point is unique, so the answer
    is the same.

    Args:
        model: CovarianceModel
        zs: array of spectral parameter values
        tol: relative tolerance
        max_iter: iteration cap per point

    Returns:
        BatchSolution
    """
    tol = settings.SPEQ_SOLVER_TOL if tol is None else float(tol)
    max_iter = settings.SPEQ_SOLVER_MAX_ITER if max_iter is None else int(max_iter)
    params = [as_spectral_parameter(z) for z in np.atleast_1d(zs)]
    values = np.array([param.value for param in params], dtype=np.complex128)
    real = np.array([param.is_real for param in params])

    current = values.copy()
    iterations = np.zeros(values.size, dtype=int)
    active = np.ones(values.size, dtype=bool)

    for sweep in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ls = current[idx]
        zv = values[idx]
        mapped = _F_values(model, ls, zv)
        residual = mapped - ls
        candidate = mapped

        if sweep > newton_after:
            derivative = _F_derivative(model, ls)
            with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
                newton = ls - residual / (derivative - 1.0)
                newton_ok = np.isfinite(newton) & _in_omega(newton, zv, real[idx])
                if np.any(newton_ok):
                    safe = np.where(newton_ok, newton, ls)
                    newton_residual = np.abs(_F_values(model, safe, zv) - safe)
                    better = newton_ok & (newton_residual < np.abs(residual))
                    candidate = np.where(better, newton, mapped)

        candidate = np.where(real[idx], candidate.real + 0j, candidate)
        current[idx] = candidate
        iterations[idx] = sweep
        done = np.abs(candidate - ls) <= tol * np.maximum(1.0, np.abs(candidate))
        active[idx[done]] = False

    final_residual = np.abs(_F_values(model, current, values) - current)
    if np.any(active):
        first = int(np.flatnonzero(active)[0])
        logger.error(f"Batch fixed point did not converge at z={values[first]} (residual {final_residual[first]:.3e})")
        error = NonConvergenceError(
            f"fixed point did not converge at z={values[first]} within {max_iter} iterations",
            last_iterate=complex(current[first]), residual=float(final_residual[first]),
            iterations=max_iter,
        )
        error.index = first
        raise error

    return BatchSolution(zs=values, c=current, residual=final_residual, iterations=iterations)


def _check_solution(model, solution, z):
    z = as_spectral_parameter(z)
    if not isinstance(solution, FixedPointSolution):
        raise PreconditionError("expected a FixedPointSolution")
    if solution.model_key != model.key or solution.z.value != z.value:
        raise PreconditionError(f"solution was solved for another model or spectral parameter (z={solution.z})")
    return z


def equivalent_diagonal(model, c, z):
    """Diagonal of G^c in Sigma's eigenbasis (descending eigenvalues)."""
    z = as_spectral_parameter(z).value
    return 1.0 / ((z / c) * model.sigma_eigenvalues - z)


def deterministic_equivalent(model, solution, z):
    """
    G(z) = ((z/c) Sigma - zI)^-1 as a dense matrix in Sigma's eigenbasis.

    Equal to (-z g_check(z) Sigma - zI)^-1 since c = -1/g_check(z).
    """
    z = _check_solution(model, solution, z)
    return np.diag(equivalent_diagonal(model, solution.c, z))


def g_nu(model, solution, z):
    """(1/p) Tr G(z), the Stieltjes transform of MP(gamma) boxtimes mu_Sigma."""
    z = _check_solution(model, solution, z)
    return complex(np.dot(model.atom_weights, 1.0 / ((z.value / solution.c) * model.atoms - z.value)))


def g_nu_check(model, solution, z):
    """
    Transform of (1 - gamma) delta_0 + gamma nu: (gamma - 1)/z + gamma g_nu.

    Raises ConsistencyError when it drifts from -1/c.
    """
    z = _check_solution(model, solution, z)
    value = (model.gamma - 1) / z.value + model.gamma * g_nu(model, solution, z)
    reference = solution.g_nu_check
    if abs(value - reference) > 1e-8 * max(1.0, abs(reference)):
        logger.error(f"g_check={value} disagrees with -1/c={reference} at z={z}")
        raise ConsistencyError(f"g_check and -1/c disagree at z={z}: {value} vs {reference}")
    return complex(value)


def im_shift_identity(model, l, z):
    """
    Both sides of Im F(l) - Im z = (|z|^2/n)(Im l/|l|^2) ||Sigma G^l||_F^2, with the
    upper bound gamma ||Sigma|| |z| eta.

    Returns:
        tuple: (lhs, rhs, upper_bound)
    """
    z = as_spectral_parameter(z)
    if z.is_real:
        raise PreconditionError("imaginary shift identity needs z in the upper half-plane")
    l = complex(l)
    if not OmegaDomain(z).contains(l):
        raise DomainError(f"l={l} is not in the domain of F at z={z}")
    lhs = functional_F(model, l, z).imag - z.value.imag
    g = 1.0 / ((z.value / l) * model.atoms - z.value)
    frobenius = model.gamma * np.dot(model.atom_weights, model.atoms ** 2 * np.abs(g) ** 2)
    rhs = abs(z.value) ** 2 * l.imag / abs(l) ** 2 * frobenius
    bound = model.gamma * model.sigma_spectral_norm * abs(z.value) * z.eta
    return float(lhs), float(rhs), float(bound)


def special_bound_real(model, l, z):
    """Spectral norm of (z/l) G^l Sigma; at most ||Sigma||/(||Sigma|| + |z|) on the real branch."""
    z = as_spectral_parameter(z)
    if not z.is_real:
        raise InapplicableBoundError(f"the norm bound holds on the real branch only, got z = {z.value}")
    l = complex(l)
    eigen = np.abs(model.atoms / (model.atoms - l))
    return float(np.max(eigen))


def solution_record(model, solution):
    """Flat JSON-ready record of one solve."""
    z = solution.z
    g = g_nu(model, solution, z)
    return {
        'z_re': z.value.real,
        'z_im': z.value.imag,
        'branch': z.branch.value,
        'gamma': model.gamma,
        'c_re': solution.c.real,
        'c_im': solution.c.imag,
        'g_nu_re': g.real,
        'g_nu_im': g.imag,
        'residual': solution.residual,
        'iterations': solution.iterations,
        'kF': solution.kF_theoretical,
    }
