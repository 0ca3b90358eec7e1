"""
Recovery of nu = MP(gamma) boxtimes mu_Sigma from its Stieltjes transform.

g_nu is evaluated on lines x + i*eps through the fixed-point solver, the
known atom at zero is subtracted, Im(g)/pi is extrapolated to eps -> 0 and
the result is integrated into a CDF.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.integrate
from django.conf import settings
from django.core.cache import cache

from equiv_app.equiv_service import g_nu, solve_fixed_point, solve_fixed_point_batch
from equiv_app.errors import NonConvergenceError, PreconditionError
from equiv_app.measures import CdfFunction, SampledDensity
from equiv_app.resolvents import as_spectral_parameter
from equiv_app.utils import get_stable_hash, run_parallel

logger = logging.getLogger(__name__)

MIN_GRID_SIZE = 64
GRID_MARGIN = 1.05
CLAMP_WARNING = 1e-6
CHUNK_SIZE = 128


@dataclass(frozen=True)
class FreeConvolutionResult:
    density: SampledDensity
    cdf: CdfFunction
    atom_at_zero: float
    support: tuple
    gamma: float
    epsilon_schedule: tuple = ()
    clamp_magnitude: float = 0.0

    @property
    def total_mass(self):
        return self.density.total_mass

    def stieltjes(self, z):
        return self.density.stieltjes(z)


def marchenko_pastur_density(x, gamma, scale=1.0):
    """Closed-form MP(gamma) density for Sigma = scale * I (continuous part only)."""
    x = np.asarray(x, dtype=np.float64)
    lower = scale * (1 - np.sqrt(gamma)) ** 2
    upper = scale * (1 + np.sqrt(gamma)) ** 2
    inside = (x > lower) & (x < upper) & (x > 0)
    density = np.zeros_like(x)
    density[inside] = np.sqrt((upper - x[inside]) * (x[inside] - lower)) / (2 * np.pi * gamma * scale * x[inside])
    return density


def zero_atom(model):
    """nu({0}) = max(mu_Sigma({0}), 1 - 1/gamma)."""
    sigma_zero = float(np.mean(model.sigma_eigenvalues == 0))
    return max(sigma_zero, 1.0 - 1.0 / model.gamma, 0.0)


def support_bracket(model):
    hi = (1 + np.sqrt(model.gamma)) ** 2 * model.sigma_spectral_norm
    lo = (1 - np.sqrt(model.gamma)) ** 2 * model.sigma_min if model.gamma < 1 else 0.0
    if hi <= 0:
        hi = 1.0
    return float(lo), float(hi)


def density_grid(model, grid_size):
    """
    Uniform grid on [0, 1.05 hi], refined near the lower edge when gamma < 1 and
    Sigma is invertible, and near 0 where a 1/sqrt(x) singularity can sit.
    """
    lo, hi = support_bracket(model)
    upper = GRID_MARGIN * hi
    grid = np.linspace(0.0, upper, grid_size)
    extra = max(16, grid_size // 4)
    near_zero = upper * np.geomspace(1e-5, 0.05, extra)
    grid = np.union1d(grid, near_zero)
    if model.gamma < 1 and model.sigma_min > 0:
        width = 0.1 * (hi - lo)
        offsets = width * np.linspace(0.0, 1.0, extra) ** 2
        edge = np.concatenate([lo - offsets[1:extra // 4], lo + offsets])
        grid = np.union1d(grid, edge[(edge > 0) & (edge < upper)])
    return grid


def _transform_on_line(model, xs, epsilon, tol, max_iter):
    zs = xs + 1j * epsilon
    try:
        batch = solve_fixed_point_batch(model, zs, tol=tol, max_iter=max_iter)
    except NonConvergenceError as e:
        e.x = float(xs[getattr(e, 'index', 0)])
        raise
    c = batch.c
    return np.sum(
        model.atom_weights[None, :] / ((zs / c)[:, None] * model.atoms[None, :] - zs[:, None]),
        axis=1,
    )


def free_multiplicative_mp(model, grid_size=None, epsilon_schedule=None, tol=None, max_iter=None, threads=None):
    """
    Density, CDF and zero atom of MP(gamma) boxtimes mu_Sigma.

    Args:
        model: CovarianceModel
        grid_size: number of uniform grid points (>= 64, SPEQ_FREECONV_GRID by default)
        epsilon_schedule: descending heights of the inversion lines (SPEQ_FREECONV_EPS)
        tol, max_iter: fixed-point solver settings
        threads: worker count for the grid solves

    Returns:
        FreeConvolutionResult
    """
    grid_size = settings.SPEQ_FREECONV_GRID if grid_size is None else int(grid_size)
    schedule = tuple(settings.SPEQ_FREECONV_EPS if epsilon_schedule is None else epsilon_schedule)
    if grid_size < MIN_GRID_SIZE:
        raise PreconditionError(f"grid size must be at least {MIN_GRID_SIZE}, got {grid_size}")
    if not schedule or any(eps <= 0 for eps in schedule) or list(schedule) != sorted(schedule, reverse=True):
        raise PreconditionError(f"epsilon schedule must be positive and descending, got {schedule}")
    if len(set(schedule)) != len(schedule):
        raise PreconditionError("epsilon schedule has repeated values")

    cache_key = f"speq_freeconv_{get_stable_hash(model.key, grid_size, schedule, tol, max_iter)}"
    cached = cache.get(cache_key)
    if cached:
        return cached

    lo, hi = support_bracket(model)
    atom = zero_atom(model)

    if model.sigma_spectral_norm == 0:
        grid = np.linspace(0.0, hi, grid_size)
        density = SampledDensity(grid, np.zeros_like(grid), 1.0)
        return FreeConvolutionResult(density, density.cdf(), 1.0, (0.0, 0.0), model.gamma, schedule)

    grid = density_grid(model, grid_size)
    chunks = [grid[start:start + CHUNK_SIZE] for start in range(0, grid.size, CHUNK_SIZE)]

    estimates = []
    for epsilon in schedule:
        parts = run_parallel(
            lambda xs, eps=epsilon: _transform_on_line(model, xs, eps, tol, max_iter), chunks, threads,
        )
        g = np.concatenate(parts)
        lorentzian = atom * epsilon / (grid ** 2 + epsilon ** 2)
        estimates.append((g.imag - lorentzian) / np.pi)

    if len(schedule) >= 2:
        ratio = schedule[-2] / schedule[-1]
        values = (ratio * estimates[-1] - estimates[-2]) / (ratio - 1)
    else:
        values = estimates[-1]

    clamp = float(max(0.0, -np.min(values)))
    if clamp > CLAMP_WARNING:
        logger.warning(f"Clamped density values down to {-clamp:.3e} (gamma={model.gamma})")
    values = np.clip(values, 0.0, None)

    mass = float(scipy.integrate.trapezoid(values, grid))
    recovered_atom = min(max(1.0 - mass, max(0.0, 1.0 - 1.0 / model.gamma)), 1.0)
    if abs(recovered_atom - atom) > 5e-3:
        logger.warning(f"Recovered zero atom {recovered_atom:.5f} differs from the analytic {atom:.5f}")
    if mass + recovered_atom > 1.0:
        # keep the total at 1 by trimming the continuous part
        values = values * (1.0 - recovered_atom) / mass

    density = SampledDensity(grid, values, recovered_atom)
    result = FreeConvolutionResult(
        density=density,
        cdf=density.cdf(),
        atom_at_zero=recovered_atom,
        support=(lo, hi),
        gamma=model.gamma,
        epsilon_schedule=schedule,
        clamp_magnitude=clamp,
    )
    logger.info(f"Free convolution for gamma={model.gamma}: {grid.size} points, zero atom {recovered_atom:.5f}")
    cache.set(cache_key, result, settings.SPEQ_SOLVER_CACHE_TIMEOUT)
    return result


def nu_check_measure(result, gamma):
    """
    (1 - gamma) delta_0 + gamma nu.

    For gamma > 1 the negative weight at 0 is absorbed by nu's own atom, which
    is at least 1 - 1/gamma, so the zero atom stays nonnegative.
    """
    if gamma <= 0:
        raise PreconditionError(f"gamma must be positive, got {gamma}")
    if gamma == 1:
        return result
    density = result.density
    atom = max(0.0, (1 - gamma) + gamma * result.atom_at_zero)
    mixed = SampledDensity(density.grid, gamma * density.values, atom)
    return FreeConvolutionResult(
        density=mixed,
        cdf=mixed.cdf(),
        atom_at_zero=atom,
        support=result.support,
        gamma=result.gamma,
        epsilon_schedule=result.epsilon_schedule,
        clamp_magnitude=result.clamp_magnitude,
    )


def holder_constant(result, exponent=0.5):
    """sup over grid pairs s < t in (0, inf) of |F(t) - F(s)| / (t - s)^exponent."""
    grid = result.density.grid
    grid = grid[grid > 0]
    values = result.cdf(grid)
    diff_f = np.abs(values[None, :] - values[:, None])
    diff_t = np.abs(grid[None, :] - grid[:, None])
    mask = diff_t > 0
    return float(np.max(diff_f[mask] / diff_t[mask] ** exponent))


def density_holder_bound(model):
    """2 / (pi sqrt(lambda_min gamma)), from f_nu(t) <= (lambda_min t gamma)^-1/2 / pi."""
    if not model.is_invertible:
        raise PreconditionError("the Hölder bound needs an invertible Sigma")
    return float(2.0 / (np.pi * np.sqrt(model.sigma_min * model.gamma)))


def default_check_points(result, count=20):
    lo, hi = result.support
    hi = hi if hi > 0 else 1.0
    xs = np.linspace(-0.25 * hi, 1.25 * hi, count)
    heights = np.linspace(0.1, 0.5, count) * hi
    return xs + 1j * heights


def stieltjes_check(result, model, zs=None):
    """
    Max relative error between the transform of the recovered measure and g_nu.

    Args:
        result: FreeConvolutionResult for `model`
        model: CovarianceModel
        zs: held-out spectral parameters (20 upper half-plane points by default)

    Returns:
        float: max |g_recovered - g_nu| / |g_nu|
    """
    zs = default_check_points(result) if zs is None else np.atleast_1d(zs)
    worst = 0.0
    for value in zs:
        z = as_spectral_parameter(value)
        solution = solve_fixed_point(model, z)
        reference = g_nu(model, solution, z)
        recovered = result.stieltjes(z)
        worst = max(worst, abs(recovered - reference) / abs(reference))
    logger.info(f"Stieltjes check over {len(zs)} points: max relative error {worst:.3e}")
    return float(worst)
