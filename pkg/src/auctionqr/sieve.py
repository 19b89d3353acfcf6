"""Localized sieve bases and the augmented sieve quantile regression.

Product bases P_{i,j,h}(x) = h^(-D_M/2) prod_d p((x_{j_d} - h i_d) / h) over
interaction tuples j and integer shifts i whose support meets [0,1]^D, with
p either the regressogram indicator or a cardinal B-spline. Each point
activates a bounded number of basis functions regardless of h (disjoint
support), keeping the Gram matrix banded within interaction blocks.

The augmented sieve fit reuses the AQR machinery with regressors
pi(t) (x) P(x) and recovers the private-value surface by the same
beta_0 + alpha beta_1 / (I-1) map.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .solver import aqr_fit


def bspline_p(t, m):
    """Cardinal B-spline of order m on [0, m] with uniformly spaced knots."""
    if m < 2:
        raise InputError("B-spline order m must be >= 2")
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    fact = math.factorial(m - 1)
    for i in range(m + 1):
        out += (-1) ** i * math.comb(m, i) * np.clip(t - i, 0.0, None) \
            ** (m - 1) / fact
    return np.where((t < 0) | (t > m), 0.0, out)


def _regressogram_p(t):
    t = np.asarray(t, dtype=float)
    return ((t >= 0.0) & (t < 1.0)).astype(float)


@dataclass
class SieveBasis:
    """Localized product sieve over [0, 1]^D."""

    kind: str
    h: float
    d: int
    d_m: int
    m: int = 3
    indices: list = None  # [(j_tuple, i_tuple), ...] in canonical order

    def __post_init__(self):
        if self.kind not in ("regressogram", "bspline"):
            raise InputError(f"unknown sieve kind {self.kind!r}")
        if not 1 <= self.d_m <= self.d:
            raise InputError("need 1 <= interaction order D_M <= D")
        if not 0.0 < self.h <= 1.0:
            raise InputError("sieve bandwidth must lie in (0, 1]")
        if self.kind == "bspline" and self.m < 2:
            raise InputError("B-spline order m must be >= 2")
        if self.indices is None:
            self.indices = self._enumerate_indices()
        self.indices = [(tuple(j), tuple(i)) for j, i in self.indices]

    @property
    def support_width(self):
        return 1 if self.kind == "regressogram" else self.m

    @property
    def dim(self):
        return len(self.indices)

    def _enumerate_indices(self):
        w = self.support_width
        i_lo = -w + 1
        i_hi = int(np.ceil(1.0 / self.h)) - 1
        shifts = range(i_lo, i_hi + 1)
        out = []
        for j in itertools.combinations(range(self.d), self.d_m):
            for i in itertools.product(shifts, repeat=self.d_m):
                out.append((j, i))
        return out

    def _p(self, t):
        return _regressogram_p(t) if self.kind == "regressogram" \
            else bspline_p(t, self.m)

    def evaluate(self, x_mat):
        x_mat = np.atleast_2d(np.asarray(x_mat, dtype=float))
        n = x_mat.shape[0]
        x_mat = x_mat.reshape(n, self.d)
        out = np.empty((n, self.dim))
        scale = self.h ** (-self.d_m / 2.0)
        if self.kind == "regressogram":
            # assign each point to exactly one cell per coordinate; knot
            # values would otherwise hit two cells through rounding
            i_hi = int(np.ceil(1.0 / self.h)) - 1
            cells = np.clip(np.floor(x_mat / self.h).astype(int), None, i_hi)
            for k, (j, i) in enumerate(self.indices):
                vals = np.full(n, scale)
                for jd, idx in zip(j, i):
                    vals = vals * (cells[:, jd] == idx)
                out[:, k] = vals
            return out
        for k, (j, i) in enumerate(self.indices):
            vals = np.full(n, scale)
            for jd, idx in zip(j, i):
                vals = vals * self._p((x_mat[:, jd] - self.h * idx) / self.h)
            out[:, k] = vals
        return out

    def evaluate_one(self, x):
        return self.evaluate(np.atleast_1d(np.asarray(x, dtype=float))
                             .reshape(1, -1))[0]

    def gram(self, n_per_dim=400):
        """Numeric Gram matrix int P P' dx on a midpoint lattice."""
        grids = [np.linspace(0, 1, n_per_dim, endpoint=False) + 0.5 / n_per_dim
                 for _ in range(self.d)]
        mesh = np.stack([g.ravel() for g in np.meshgrid(*grids)], axis=1)
        p = self.evaluate(mesh)
        return p.T @ p / mesh.shape[0]

    def screen_support(self, x_mat, min_count=None):
        """Drop cells with too little in-sample mass (experimental heuristic).

        Keeps indices whose activation count exceeds 0.5 h^D_M L by default;
        intended for designs whose covariate support is unknown.
        """
        x_mat = np.atleast_2d(np.asarray(x_mat, dtype=float))
        L = x_mat.shape[0]
        threshold = 0.5 * self.h ** self.d_m * L if min_count is None \
            else min_count
        counts = (self.evaluate(x_mat) != 0).sum(axis=0)
        kept = [idx for idx, cnt in zip(self.indices, counts)
                if cnt > threshold]
        if not kept:
            raise InputError("support screen removed every sieve cell")
        return SieveBasis(kind=self.kind, h=self.h, d=self.d, d_m=self.d_m,
                          m=self.m, indices=kept)

    def describe(self):
        return {"kind": self.kind, "h": self.h, "d": self.d, "d_m": self.d_m,
                "m": self.m,
                "indices": [[list(j), list(i)] for j, i in self.indices]}


def sieve_basis_from_dict(desc):
    return SieveBasis(kind=desc["kind"], h=desc["h"], d=desc["d"],
                      d_m=desc["d_m"], m=desc.get("m", 3),
                      indices=[(tuple(j), tuple(i))
                               for j, i in desc["indices"]])


def build_sieve(kind, h_sieve, d, d_m, m=3):
    """Enumerate the localized sieve for the given interaction order."""
    return SieveBasis(kind=kind, h=h_sieve, d=d, d_m=d_m, m=m)


def asqr_fit(sample, n_bidders, basis, cfg, dim_cap=2000, backend=None):
    """Augmented sieve quantile regression: AQR with sieve regressors."""
    p = (cfg.s + 2) * basis.dim
    if p > dim_cap:
        raise InputError(
            f"sieve problem dimension {p} exceeds the cap {dim_cap}; "
            "increase h_sieve or lower the interaction order")
    return aqr_fit(sample, n_bidders, cfg, design_basis=basis, backend=backend)
