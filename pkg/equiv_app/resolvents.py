"""
Resolvent algebra for sample covariance matrices.

K = XX'/n, its resolvent G(z) = (K - zI)^-1, the co-resolvent of X'X/n, the
leave-one-out resolvent, and the exact identities tying them together.
Every resolvent goes through one symmetric eigendecomposition, after which
any number of spectral parameters cost a diagonal inversion each.
"""
import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from equiv_app.errors import (
    DegeneracyError, DimensionError, NumericError, PreconditionError,
    SingularUpdateError, SpectralParameterError,
)

logger = logging.getLogger(__name__)

MAX_DENSE_DIMENSION = 16384
EIGEN_CLAMP_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-9
ORTHOGONALITY_TOL = 1e-10
DEGENERACY_TOL = 1e-14
UNIT_NORM_TOL = 1e-12


class Branch(str, enum.Enum):
    REAL_NEGATIVE = 'real_negative'
    UPPER_HALF = 'upper_half'


@dataclass(frozen=True)
class SpectralParameter:
    """
    A spectral argument z with its branch and eta.

    eta = 1/|z| on the negative real axis and 1/Im(z) in the upper
    half-plane, so that eta * |z| >= 1 always holds.
    """
    value: complex
    branch: Branch
    eta: float = field(init=False)

    def __post_init__(self):
        value = complex(self.value)
        object.__setattr__(self, 'value', value)
        if not np.isfinite(value.real) or not np.isfinite(value.imag):
            raise SpectralParameterError(f"invalid spectral parameter: z={value} is not finite")
        if self.branch == Branch.REAL_NEGATIVE:
            if value.imag != 0.0 or not value.real < 0.0:
                raise SpectralParameterError(
                    f"invalid spectral parameter: z={value} is not a negative real"
                )
            eta = 1.0 / abs(value)
        elif self.branch == Branch.UPPER_HALF:
            if not value.imag > 0.0:
                raise SpectralParameterError(
                    f"invalid spectral parameter: z={value} is not in the upper half-plane"
                )
            eta = 1.0 / value.imag
        else:
            raise SpectralParameterError(f"invalid spectral parameter: unknown branch {self.branch}")
        # rounding can push eta*|z| a hair below 1 when z is real
        if eta * abs(value) < 1.0 - 1e-12:
            raise SpectralParameterError(f"invalid spectral parameter: eta*|z| < 1 for z={value}")
        object.__setattr__(self, 'eta', eta)

    @classmethod
    def from_value(cls, value):
        """Infer the branch from the value; rejects 0 and the closed lower half-plane."""
        value = complex(value)
        if value.imag == 0.0 and value.real < 0.0:
            return cls(value, Branch.REAL_NEGATIVE)
        if value.imag > 0.0:
            return cls(value, Branch.UPPER_HALF)
        raise SpectralParameterError(
            f"invalid spectral parameter: z={value} must be a negative real or have Im(z) > 0"
        )

    @property
    def is_real(self):
        return self.branch == Branch.REAL_NEGATIVE

    def __str__(self):
        return f"{self.value.real:+.6g}{self.value.imag:+.6g}i"


def as_spectral_parameter(z):
    if isinstance(z, SpectralParameter):
        return z
    return SpectralParameter.from_value(z)


@dataclass(frozen=True)
class DataMatrix:
    """A real p x n data matrix with finite entries; columns are samples."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64, copy=True)
        if entries.ndim != 2:
            raise DimensionError(f"data matrix must be two-dimensional, got shape {entries.shape}")
        p, n = entries.shape
        if p < 1 or n < 1:
            raise DimensionError(f"data matrix must have p >= 1 and n >= 1, got {p}x{n}")
        if max(p, n) > MAX_DENSE_DIMENSION:
            raise DimensionError(f"data matrix {p}x{n} exceeds the dense limit {MAX_DENSE_DIMENSION}")
        if not np.all(np.isfinite(entries)):
            raise PreconditionError("data matrix has non-finite entries")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def p(self):
        return self.entries.shape[0]

    @property
    def n(self):
        return self.entries.shape[1]

    @property
    def gamma(self):
        return self.p / self.n

    def column(self, index):
        if not 0 <= index < self.n:
            raise PreconditionError(f"column index {index} out of range for n={self.n}")
        return self.entries[:, index]


def as_data_matrix(X):
    if isinstance(X, DataMatrix):
        return X
    return DataMatrix(np.asarray(X, dtype=np.float64))


def _as_symmetric(K):
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {K.shape}")
    if K.shape[0] > MAX_DENSE_DIMENSION:
        raise DimensionError(f"matrix of size {K.shape[0]} exceeds the dense limit {MAX_DENSE_DIMENSION}")
    scale = max(1.0, float(np.max(np.abs(K))) if K.size else 1.0)
    if not np.allclose(K, K.T, rtol=0.0, atol=1e-10 * scale):
        raise PreconditionError("matrix is not symmetric")
    return 0.5 * (K + K.T)


def symmetric_eigh(K):
    """
    Eigendecomposition of a symmetric PSD matrix.

    Args:
        K: symmetric positive semi-definite matrix

    Returns:
        tuple: (eigenvalues ascending and clamped at 0, orthogonal eigenvectors)
    """
    K = _as_symmetric(K)
    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(K)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        logger.error(f"Eigendecomposition failed for a {K.shape[0]}x{K.shape[0]} matrix: {e}")
        raise NumericError(f"eigendecomposition did not converge: {e}") from e

    scale = max(1.0, float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 1.0)
    if eigenvalues.size and eigenvalues[0] < -EIGEN_CLAMP_TOL * scale:
        raise PreconditionError(f"matrix is not positive semi-definite (eigenvalue {eigenvalues[0]:.3e})")

    norm_k = np.linalg.norm(K)
    reconstruction = np.linalg.norm((eigenvectors * eigenvalues) @ eigenvectors.T - K)
    if reconstruction > RECONSTRUCTION_TOL * max(norm_k, 1e-300) and reconstruction > 1e-300:
        raise NumericError(f"eigendecomposition residual {reconstruction:.3e} exceeds tolerance")

    return np.clip(eigenvalues, 0.0, None), eigenvectors


@dataclass(frozen=True)
class ResolventView:
    """
    Resolvent of a PSD matrix at one spectral parameter, kept in eigen-form.

    The dense matrix is only built by materialize(); traces and quadratic
    forms use the spectrum directly.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    z: SpectralParameter

    def __post_init__(self):
        if np.any(self.eigenvalues < 0):
            raise PreconditionError("resolvent base eigenvalues must be nonnegative")
        q = self.eigenvectors
        if q.size and np.linalg.norm(q.T @ q - np.eye(q.shape[1]), ord=np.inf) > ORTHOGONALITY_TOL * max(1, q.shape[0]):
            raise NumericError("eigenvector matrix is not orthogonal")

    @classmethod
    def from_matrix(cls, K, z):
        eigenvalues, eigenvectors = symmetric_eigh(K)
        return cls(eigenvalues, eigenvectors, as_spectral_parameter(z))

    def at(self, z):
        """Same base matrix, another spectral parameter."""
        return ResolventView(self.eigenvalues, self.eigenvectors, as_spectral_parameter(z))

    @property
    def size(self):
        return self.eigenvalues.shape[0]

    def diagonal(self):
        return 1.0 / (self.eigenvalues - self.z.value)

    def materialize(self):
        q = self.eigenvectors
        return (q * self.diagonal()) @ q.T

    def trace(self):
        return complex(np.sum(self.diagonal()))

    def stieltjes(self):
        return self.trace() / self.size

    def quadratic_form(self, u, v=None):
        """u' G v for real vectors (v defaults to u)."""
        left = self.eigenvectors.T @ np.asarray(u)
        right = left if v is None else self.eigenvectors.T @ np.asarray(v)
        return complex(np.sum(left * self.diagonal() * right))

    def apply(self, B):
        """G @ B without forming G."""
        q = self.eigenvectors
        return q @ (self.diagonal()[:, None] * (q.T @ B))

    def spectral_norm(self):
        return float(np.max(np.abs(self.diagonal()))) if self.size else 0.0


def sample_covariance(X):
    """K = XX'/n, symmetrized."""
    X = as_data_matrix(X)
    if X.p * X.p > MAX_DENSE_DIMENSION ** 2:
        raise DimensionError(f"sample covariance of size {X.p} is too large")
    entries = X.entries
    K = entries @ entries.T / X.n
    return 0.5 * (K + K.T)


def co_sample_covariance(X):
    X = as_data_matrix(X)
    entries = X.entries
    K = entries.T @ entries / X.n
    return 0.5 * (K + K.T)


def resolvent_view(K, z):
    return ResolventView.from_matrix(K, z)


def resolvent(K, z):
    """(K - zI)^-1 for a symmetric PSD K."""
    return resolvent_view(K, z).materialize()


def co_resolvent(X, z):
    """Resolvent of X'X/n (n x n)."""
    return resolvent(co_sample_covariance(X), z)


def loo_covariance(X, column_index):
    X = as_data_matrix(X)
    x = X.column(column_index)
    return sample_covariance(X) - np.outer(x, x) / X.n


def loo_resolvent(X, column_index, z):
    """Resolvent of K - xx'/n where x is the removed column."""
    K_minus = loo_covariance(X, column_index)
    # K - xx'/n loses exact PSD-ness by rounding only
    return resolvent(0.5 * (K_minus + K_minus.T), z)


@dataclass(frozen=True)
class LooIdentityReport:
    quadratic_form_residual: float
    rank_one_residual: float
    column_residual: float
    quadratic_form_scale: float
    rank_one_scale: float
    column_scale: float
    denominator: complex
    loo_parameter: complex

    tolerance = 1e-9

    @property
    def passed(self):
        return (
            self.quadratic_form_residual <= self.tolerance * self.quadratic_form_scale
            and self.rank_one_residual <= self.tolerance * self.rank_one_scale
            and self.column_residual <= self.tolerance * self.column_scale
        )

    def as_dict(self):
        return {
            'quadratic_form_residual': self.quadratic_form_residual,
            'rank_one_residual': self.rank_one_residual,
            'column_residual': self.column_residual,
            'passed': self.passed,
        }


def check_loo_identities(X, column_index, z):
    """
    Evaluate both sides of the three leave-one-out identities independently.

    Args:
        X: p x n data matrix
        column_index: the removed column j
        z: spectral parameter

    Returns:
        LooIdentityReport: residuals of
            (1/n) x'Gx = 1 + z Gc_jj,
            G = G_ + (z/n) Gc_jj G_ x x' G_,
            G x = -z Gc_jj G_ x,
        with the scale each residual is compared against.
    """
    X = as_data_matrix(X)
    z = as_spectral_parameter(z)
    n = X.n
    x = X.column(column_index)

    G = resolvent(sample_covariance(X), z)
    G_minus = loo_resolvent(X, column_index, z)
    G_check = co_resolvent(X, z)
    g_jj = G_check[column_index, column_index]

    denominator = 1.0 + (x @ G_minus @ x) / n
    if abs(denominator) <= DEGENERACY_TOL:
        logger.error(f"LOO denominator vanished at z={z}, column {column_index}")
        raise DegeneracyError(f"leave-one-out denominator {denominator} is numerically zero")

    quad = (x @ G @ x) / n
    rhs_quad = 1.0 + z.value * g_jj
    gx_minus = G_minus @ x
    rank_one = G_minus + (z.value / n) * g_jj * np.outer(gx_minus, gx_minus)
    gx = G @ x

    return LooIdentityReport(
        quadratic_form_residual=float(abs(quad - rhs_quad)),
        rank_one_residual=float(np.linalg.norm(G - rank_one)),
        column_residual=float(np.linalg.norm(gx + z.value * g_jj * gx_minus)),
        quadratic_form_scale=max(1.0, abs(quad), abs(rhs_quad)),
        rank_one_scale=max(1.0, np.linalg.norm(G), np.linalg.norm(G_minus)),
        column_scale=max(1.0, np.linalg.norm(gx), abs(z.value * g_jj) * np.linalg.norm(gx_minus)),
        denominator=complex(denominator),
        loo_parameter=complex(z.value + z.value * (x @ gx_minus) / n),
    )


def loo_parameter(X, column_index, z):
    """a = z + (z/n) x'G_x for the removed column; equals -1/Gc_jj."""
    X = as_data_matrix(X)
    z = as_spectral_parameter(z)
    x = X.column(column_index)
    view = ResolventView.from_matrix(loo_covariance(X, column_index), z)
    return z.value + z.value * view.quadratic_form(x) / X.n


def co_resolvent_identity_residual(X, z):
    """Frobenius residual of (1/n) X'GX = I + z Gc."""
    X = as_data_matrix(X)
    z = as_spectral_parameter(z)
    entries = X.entries
    G = resolvent(sample_covariance(X), z)
    G_check = co_resolvent(X, z)
    lhs = entries.T @ G @ entries / X.n
    return float(np.linalg.norm(lhs - (np.eye(X.n) + z.value * G_check)))


def sherman_morrison_update(Minv, u, v):
    """
    (M + uv')^-1 from M^-1 by the rank-one formula.

    Raises SingularUpdateError when 1 + v'M^-1 u is numerically zero.
    """
    Minv = np.asarray(Minv)
    u = np.asarray(u)
    v = np.asarray(v)
    if Minv.ndim != 2 or Minv.shape[0] != Minv.shape[1] or u.shape != (Minv.shape[0],) or v.shape != u.shape:
        raise DimensionError(f"incompatible shapes {Minv.shape}, {u.shape}, {v.shape}")
    minv_u = Minv @ u
    denominator = 1.0 + v @ minv_u
    if abs(denominator) <= DEGENERACY_TOL:
        raise SingularUpdateError(f"rank-one update is singular (denominator {denominator})")
    return Minv - np.outer(minv_u, v @ Minv) / denominator


def vesd_transform(K, u, z):
    """Stieltjes transform of the eigenvector ESD of K in direction u: u'G(z)u."""
    u = np.asarray(u, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1.0) > UNIT_NORM_TOL:
        raise PreconditionError(f"direction must be a unit vector, got norm {np.linalg.norm(u)}")
    return resolvent_view(K, z).quadratic_form(u)


@dataclass(frozen=True)
class ImIdentityReport:
    im_residual: float
    im_z_residual: float
    im_min_eigenvalue: float
    im_z_min_eigenvalue: float

    @property
    def passed(self):
        return (
            self.im_residual <= 1e-10 and self.im_z_residual <= 1e-10
            and self.im_min_eigenvalue >= -1e-10 and self.im_z_min_eigenvalue >= -1e-10
        )


def check_im_identities(K, z):
    """Im(G) = Im(z) GG^H and Im(zG) = Im(z) K GG^H, both PSD, for z in the upper half-plane."""
    z = as_spectral_parameter(z)
    if z.is_real:
        raise PreconditionError("imaginary-part identities need z in the upper half-plane")
    K = _as_symmetric(K)
    G = resolvent(K, z)
    gg = G @ G.conj().T
    im_g = G.imag
    im_zg = (z.value * G).imag
    return ImIdentityReport(
        im_residual=float(np.linalg.norm(im_g - z.value.imag * gg)),
        im_z_residual=float(np.linalg.norm(im_zg - z.value.imag * K @ gg)),
        im_min_eigenvalue=float(np.min(np.linalg.eigvalsh(0.5 * (im_g + im_g.T)))),
        im_z_min_eigenvalue=float(np.min(np.linalg.eigvalsh(0.5 * (im_zg + im_zg.T)))),
    )


def resolvent_bounds(X, z):
    """
    Observed norms next to their deterministic bounds.

    Returns:
        dict: ||G|| <= eta and ||G X|| <= sqrt(2n) eta |z|^1/2
    """
    X = as_data_matrix(X)
    z = as_spectral_parameter(z)
    view = resolvent_view(sample_covariance(X), z)
    return {
        'norm_g': view.spectral_norm(),
        'bound_g': z.eta,
        'norm_gx': float(np.linalg.norm(view.apply(X.entries), ord=2)),
        'bound_gx': float(np.sqrt(2 * X.n) * z.eta * np.sqrt(abs(z.value))),
    }


def lipschitz_probe(X, H, z):
    """
    ||G(X) - G(X+H)||_F / ||H||_F next to the Lipschitz constant
    n^-1/2 2^3/2 eta^2 |z|^1/2.
    """
    X = as_data_matrix(X)
    H = np.asarray(H, dtype=np.float64)
    if H.shape != X.entries.shape:
        raise DimensionError(f"perturbation shape {H.shape} differs from {X.entries.shape}")
    z = as_spectral_parameter(z)
    norm_h = np.linalg.norm(H)
    if norm_h == 0:
        raise PreconditionError("perturbation must be nonzero")
    G = resolvent(sample_covariance(X), z)
    G_shift = resolvent(sample_covariance(X.entries + H), z)
    observed = float(np.linalg.norm(G - G_shift) / norm_h)
    bound = float(2 ** 1.5 * z.eta ** 2 * np.sqrt(abs(z.value)) / np.sqrt(X.n))
    return observed, bound


def concentration_scale(z, n):
    """
    Observable diameters of the resolvent.

    Returns:
        dict: 'tau_scale' = tau/sqrt(n) with tau = |z|^-3/2 (real branch) or
        |z|^1/2 / Im(z)^2 (complex branch), and 'lipschitz_scale' =
        eta^2 |z|^1/2 / sqrt(n).
    """
    z = as_spectral_parameter(z)
    modulus = abs(z.value)
    if z.is_real:
        tau = modulus ** -1.5
    else:
        tau = np.sqrt(modulus) / z.value.imag ** 2
    return {
        'tau_scale': float(tau / np.sqrt(n)),
        'lipschitz_scale': float(z.eta ** 2 * np.sqrt(modulus) / np.sqrt(n)),
    }
