"""Small numerical kernels used by the simulator.

Complex matrices are plain ``numpy`` arrays of dtype ``complex128``; the
generator type is :class:`numpy.random.Generator`.  Only the shapes this
package needs are supported (tall channel matrices, tiny Gram matrices).
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SingularMatrixError",
    "OUProcess",
    "make_rng",
    "gram",
    "cinverse",
    "zf_diag",
    "ou_step",
    "sample_gaussian_cvector",
    "sample_poisson",
    "bessel_j0",
]

PIVOT_RTOL = 1e-14
DEFAULT_COND_CAP = 1e12
J0_MAX_ARG = 20.0


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix is singular or too ill-conditioned to invert."""


def make_rng(seed=None):
    """Return a ``numpy`` generator; an existing generator is passed through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gram(H):
    """Return ``H^H H`` for a tall ``N x M`` complex matrix."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise ValueError(f"expected a 2-D channel matrix, got shape {H.shape}")
    n, m = H.shape
    if n <= m:
        raise ValueError(f"channel matrix must have more rows than columns (N > M), got {n}x{m}")
    return H.conj().T @ H


def cinverse(G, cond_cap=DEFAULT_COND_CAP):
    """Invert a square complex matrix by Gauss-Jordan elimination with partial pivoting.

    Pivots smaller than ``1e-14`` times the largest magnitude in their row of
    the original matrix are rejected, as is any result whose 1-norm condition
    estimate exceeds ``cond_cap``.  Failure always raises
    :class:`SingularMatrixError`; NaNs never leak out.
    """
    G = np.asarray(G, dtype=complex)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise SingularMatrixError("matrix has non-finite entries")
    n = G.shape[0]
    row_scale = np.abs(G).max(axis=1)
    if np.any(row_scale == 0.0):
        raise SingularMatrixError("matrix has an all-zero row")

    a = G.copy()
    inv = np.eye(n, dtype=complex)
    scale = row_scale.copy()
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= PIVOT_RTOL * scale[piv]:
            raise SingularMatrixError(f"pivot {col} below tolerance; matrix is singular")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            inv[[col, piv]] = inv[[piv, col]]
            scale[[col, piv]] = scale[[piv, col]]
        p = a[col, col]
        a[col] /= p
        inv[col] /= p
        for r in range(n):
            if r != col:
                f = a[r, col]
                if f != 0:
                    a[r] -= f * a[col]
                    inv[r] -= f * inv[col]

    cond = np.abs(G).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularMatrixError(f"condition estimate {cond:.3g} exceeds cap {cond_cap:.3g}")
    return inv


def zf_diag(H, cond_cap=DEFAULT_COND_CAP):
    """Diagonal of ``(H^H H)^{-1}`` as a real array of length M.

    These are the per-user noise amplification factors of the zero-forcing
    detector.
    """
    d = np.real(np.diagonal(cinverse(gram(H), cond_cap=cond_cap))).copy()
    if not np.all(d > 0):
        raise SingularMatrixError("channel matrix is rank deficient")
    return d


@dataclass
class OUProcess:
    """Ornstein-Uhlenbeck exploration noise, one coordinate per action dimension."""

    theta: float = 0.15
    sigma: float = 0.12
    mu0: float = 0.0
    size: int = 1
    x: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.x is None:
            self.reset()
        else:
            self.x = np.array(self.x, dtype=float).reshape(self.size)

    def reset(self):
        self.x = np.full(self.size, float(self.mu0))

    def step(self, rng):
        return ou_step(self, rng)


def ou_step(p, rng):
    """Advance the process one step and return (a copy of) the new value."""
    noise = rng.standard_normal(p.size) if p.sigma > 0 else 0.0
    p.x = p.x + p.theta * (p.mu0 - p.x) + p.sigma * noise
    return p.x.copy()


def sample_gaussian_cvector(rng, n, var):
    """Draw ``n`` i.i.d. CN(0, var) entries (real and imaginary parts each var/2)."""
    if var < 0:
        raise ValueError("variance must be nonnegative")
    if var == 0:
        return np.zeros(n, dtype=complex)
    z = rng.standard_normal((2, n))
    return math.sqrt(var / 2.0) * (z[0] + 1j * z[1])


def sample_poisson(rng, mean):
    if mean < 0:
        raise ValueError("mean must be nonnegative")
    if mean == 0:
        return 0
    return int(rng.poisson(mean))


def bessel_j0(x):
    """Bessel function of the first kind, order zero, for ``|x| < 20``.

    Evaluated from its power series with compensated summation, which keeps
    the absolute error below 1e-8 over the accepted range.
    """
    x = float(x)
    if not abs(x) < J0_MAX_ARG:
        raise ValueError(f"bessel_j0 accepts |x| < {J0_MAX_ARG}, got {x}")
    q = -(x * x) / 4.0
    term = 1.0
    terms = [term]
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        terms.append(term)
        if abs(term) < 1e-17 and k > abs(x):
            break
    return math.fsum(terms)
