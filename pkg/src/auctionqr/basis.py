"""Kernels, quantile-level polynomial vectors and quadrature grids.

These are the deterministic building blocks of the augmented quantile
objective: a kernel on [-1, 1], the scaled Taylor vector pi(t), the
Kronecker regressor pi(t) (x) x1, and Gauss-Legendre grids on the
truncated window T = [-1, 1] n [-alpha/h, (1-alpha)/h].
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .errors import InputError


# ----------------------------------------------------------------------
# kernels

@dataclass(frozen=True)
class Kernel:
    """Symmetric density on [-1, 1] with closed-form cdf."""

    name: str

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) <= 1.0
        if self.name == "epanechnikov":
            out = 0.75 * (1.0 - t * t)
        elif self.name == "triweight":
            u = 1.0 - t * t
            out = (35.0 / 32.0) * u * u * u
        else:  # pragma: no cover - guarded by get_kernel
            raise InputError(f"unknown kernel {self.name!r}")
        return np.where(inside, out, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, -1.0, 1.0)
        if self.name == "epanechnikov":
            out = 0.5 + 0.75 * tc - 0.25 * tc ** 3
        else:  # triweight
            out = 0.5 + (35.0 / 32.0) * (tc - tc ** 3 + 0.6 * tc ** 5 - tc ** 7 / 7.0)
        return np.where(t < -1.0, 0.0, np.where(t > 1.0, 1.0, out))


_KERNELS = {"epanechnikov": Kernel("epanechnikov"), "triweight": Kernel("triweight")}


def get_kernel(name):
    if isinstance(name, Kernel):
        return name
    try:
        return _KERNELS[name]
    except KeyError:
        raise InputError(
            f"unknown kernel {name!r}; available: {sorted(_KERNELS)}") from None


# ----------------------------------------------------------------------
# polynomial and regressor vectors

def poly_vector(t, s):
    """Scaled Taylor vector pi(t) = [1, t, t^2/2!, ..., t^(s+1)/(s+1)!]."""
    if s < 0:
        raise InputError("smoothness order s must be >= 0")
    t = float(t)
    out = np.empty(s + 2)
    out[0] = 1.0
    for k in range(1, s + 2):
        out[k] = out[k - 1] * t / k
    return out


def poly_matrix(t, s):
    """poly_vector applied to an array of t values; rows are pi(t_m)."""
    t = np.asarray(t, dtype=float)
    out = np.empty((t.size, s + 2))
    out[:, 0] = 1.0
    for k in range(1, s + 2):
        out[:, k] = out[:, k - 1] * t / k
    return out


def regressor_vector(x, t, s):
    """pi(t) (x) x1 in block order [1, x', t, t*x', ...]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x1 = np.concatenate(([1.0], x))
    return np.kron(poly_vector(t, s), x1)


# ----------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def _gl_nodes(M):
    nodes, weights = np.polynomial.legendre.leggauss(M)
    return nodes, weights


def gauss_legendre(a, b, M):
    """Gauss-Legendre nodes and weights on [a, b]."""
    nodes, weights = _gl_nodes(int(M))
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


@dataclass(frozen=True)
class QuadGrid:
    """Gauss-Legendre grid on the truncated window T_{alpha,h}."""

    nodes: np.ndarray
    weights: np.ndarray
    alpha: float
    h: float
    lo: float
    hi: float

    @property
    def m(self):
        return self.nodes.size


def quad_grid(alpha, h, kernel, M=32):
    """Quadrature grid on T = [-1, 1] n [-alpha/h, (1-alpha)/h].

    The window is never empty for h < 1; an assertion guards the contract.
    """
    if not 0.0 < h < 1.0:
        raise InputError("bandwidth h must lie in (0, 1)")
    if M < 8:
        raise InputError("quadrature size M must be >= 8")
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    lo = max(-1.0, -alpha / h)
    hi = min(1.0, (1.0 - alpha) / h)
    assert lo < hi, "empty quantile-level window; cannot happen for h < 1"
    get_kernel(kernel)  # validate name
    nodes, weights = gauss_legendre(lo, hi, M)
    return QuadGrid(nodes=nodes, weights=weights, alpha=float(alpha),
                    h=float(h), lo=lo, hi=hi)


# ----------------------------------------------------------------------
# kernel constants for bias/variance expansions

@dataclass(frozen=True)
class KernelConstants:
    """Moment constants of the local polynomial on a truncated window.

    omega       : int pi pi' K over T, shape (s+2, s+2)
    bias_vector : omega^{-1} int t^{s+2} pi /(s+2)! K, shape (s+2,)
    bias_scalar : its second entry (the derivative-block selection)
    v2          : variance constant of the derivative block
    """

    omega: np.ndarray
    bias_vector: np.ndarray
    bias_scalar: float
    v2: float


def kernel_constants(kernel, s, alpha, h, M=64):
    """Omega_h(alpha), the bias vector and v_h^2(alpha) by quadrature.

    For alpha in [h, 1-h] the window is the full [-1, 1] and the constants
    coincide with the untruncated ones used by the IMSE-optimal bandwidth.
    """
    ker = get_kernel(kernel)
    grid = quad_grid(alpha, h, ker, M)
    pi = poly_matrix(grid.nodes, s)                      # (M, s+2)
    kw = ker.pdf(grid.nodes) * grid.weights              # (M,)
    omega = pi.T @ (pi * kw[:, None])
    mom = pi.T @ (kw * grid.nodes ** (s + 2)) / math.factorial(s + 2)
    try:
        bias_vector = np.linalg.solve(omega, mom)
        pi1 = np.linalg.solve(omega, np.eye(s + 2)[1])   # Omega^{-1} S1'
    except np.linalg.LinAlgError:  # pragma: no cover - valid kernels are PD
        raise InputError("singular moment matrix; kernel window too degenerate")
    # v^2 = Pi1' [ int int pi(t1) pi(t2)' min(t1,t2) K K ] Pi1
    tmin = np.minimum.outer(grid.nodes, grid.nodes)
    phi = pi @ pi1                                       # (M,)
    v2 = float((kw * phi) @ tmin @ (kw * phi))
    return KernelConstants(omega=omega, bias_vector=bias_vector,
                           bias_scalar=float(bias_vector[1]), v2=v2)
