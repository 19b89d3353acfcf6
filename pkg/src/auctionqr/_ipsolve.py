"""Interior-point kernels for weighted multi-level check-loss minimisation.

Solves, for a design with Kronecker structure pi(t_m) (x) phi(x_b),

    min_beta  sum_m sum_b kappa[m] * rho_{tau[m]}(y[b] - (pi[m] (x) phi[b])' beta)

by a Mehrotra predictor-corrector on the equivalent box-constrained dual LP

    max  c'a   s.t.  A a = A (1 - tau),  0 <= a <= 1,

whose equality multiplier is the coefficient vector beta. Levels and weights
are shared along the observation axis, which is exactly the structure of the
quantile-level-averaged objective (they depend only on the quadrature node).
Standard quantile regression is the M = 1 case.

Two implementations of the same iteration live here: a numba @njit grid kernel
with fused, allocation-free scalar loops (the hot path; scratch is reused
across quantile-grid points) and a vectorised pure-numpy fallback, selected by
the AUCTIONQR_NO_NUMBA environment variable or per call. They agree to solver
tolerance; `benchmarks/bench_ip.py` compares their speed.
"""

import os

import numpy as np

from .errors import SolverError

_STATUS_OK = 0
_STATUS_MAXITER = 1

try:  # pragma: no cover - absence exercised via the env flag
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("AUCTIONQR_NO_NUMBA", "0") != "1"


# ----------------------------------------------------------------------
# pure-numpy fallback (single problem)

def _kernel_numpy(phi, phi_t, y, pi, kappa, tau, tol, max_iter):
    nb, q = phi.shape
    M, r = pi.shape
    p = r * q
    n2 = 2.0 * M * nb
    eye = np.eye(p)

    phi2 = (phi[:, :, None] * phi[:, None, :]).reshape(nb, q * q)
    pik = pi * kappa[:, None]
    pik_t = np.ascontiguousarray(pik.T)
    p2_t = np.ascontiguousarray((pik[:, :, None] * pik[:, None, :])
                                .reshape(M, r * r).T)

    def a_mul(x_mn):
        return np.dot(pik_t, np.dot(x_mn, phi)).reshape(p)

    def at_mul(u):
        return kappa[:, None] * np.dot(np.dot(pi, u.reshape(r, q)), phi_t)

    def aqat(w_mn):
        hh = np.dot(p2_t, np.dot(w_mn, phi2))
        out = np.empty((p, p))
        for k1 in range(r):
            for k2 in range(r):
                out[k1 * q:(k1 + 1) * q, k2 * q:(k2 + 1) * q] = \
                    hh[k1 * r + k2].reshape(q, q)
        return out

    def max_step(x, dx):
        # dx >= 0 never binds; the clamp keeps the ratio huge there
        return min(1.0, 0.9995 * np.min(-x / np.minimum(dx, -1e-300)))

    c = kappa[:, None] * np.broadcast_to(y, (M, nb))
    a = np.broadcast_to((1.0 - tau)[:, None], (M, nb)).copy()
    s = np.broadcast_to(tau[:, None], (M, nb)).copy()
    b0 = a_mul(a)

    q0 = a * s
    nm = aqat(q0)
    reg = 1e-11 * (1.0 + np.trace(nm) / p)
    u = np.linalg.solve(nm + reg * eye, a_mul(q0 * c))
    e = c - at_mul(u)
    scale = 1.0 + np.sum(np.abs(c)) / n2
    delta = 0.1 * np.sum(np.abs(e)) / n2 + 1e-4 * scale
    z = np.maximum(e, 0.0) + delta
    v = np.maximum(-e, 0.0) + delta

    gap = np.sum(a * z) + np.sum(s * v)
    status = _STATUS_MAXITER
    iters = 0
    for it in range(max_iter):
        iters = it + 1
        if gap <= tol * (1.0 + abs(np.sum(c * a))):
            status = _STATUS_OK
            iters = it
            break
        mu = gap / n2
        ra = b0 - a_mul(a)
        r1 = 1.0 - a - s
        rd = c - at_mul(u) - v + z
        za = z / a
        vs = v / s
        qd = 1.0 / (za + vs)
        nm = aqat(qd)
        nm += (1e-11 * (1.0 + np.trace(nm) / p)) * eye

        rt = rd - z + v + vs * r1
        du = np.linalg.solve(nm, a_mul(qd * rt) - ra)
        da = qd * (rt - at_mul(du))
        ds = r1 - da
        dz = -z - za * da
        dv = -v - vs * ds
        ap = min(max_step(a, da), max_step(s, ds))
        ad = min(max_step(z, dz), max_step(v, dv))
        gap_aff = (np.sum((a + ap * da) * (z + ad * dz))
                   + np.sum((s + ap * ds) * (v + ad * dv)))
        sigma = min(max((gap_aff / gap) ** 3, 1e-8), 1.0)

        g4 = sigma * mu - a * z - da * dz
        g5 = sigma * mu - s * v - ds * dv
        rt = rd + g4 / a - g5 / s + vs * r1
        du = np.linalg.solve(nm, a_mul(qd * rt) - ra)
        da = qd * (rt - at_mul(du))
        ds = r1 - da
        dz = (g4 - z * da) / a
        dv = (g5 - v * ds) / s
        ap = min(max_step(a, da), max_step(s, ds))
        ad = min(max_step(z, dz), max_step(v, dv))

        a = np.maximum(a + ap * da, 1e-14)
        s = np.maximum(s + ap * ds, 1e-14)
        z = np.maximum(z + ad * dz, 1e-14)
        v = np.maximum(v + ad * dv, 1e-14)
        u = u + ad * du
        gap = np.sum(a * z) + np.sum(s * v)

    return u, gap, iters, status


def _grid_numpy(phi, phi_t, y, pi_g, kappa_g, tau_g, tol, max_iter):
    G = pi_g.shape[0]
    p = pi_g.shape[2] * phi.shape[1]
    betas = np.empty((G, p))
    gaps = np.empty(G)
    iters = np.empty(G, dtype=np.int64)
    stats = np.empty(G, dtype=np.int64)
    for g in range(G):
        betas[g], gaps[g], iters[g], stats[g] = _kernel_numpy(
            phi, phi_t, y, pi_g[g], kappa_g[g], tau_g[g], tol, max_iter)
    return betas, gaps, iters, stats


# ----------------------------------------------------------------------
# numba hot path: same iteration, fused allocation-free loops over a grid

def _build_numba_grid_kernel():
    njit = numba.njit

    @njit(cache=True, nogil=True, error_model="numpy", inline="always")
    def _chol(nm, lo):
        p = nm.shape[0]
        for i in range(p):
            for j in range(i + 1):
                acc = nm[i, j]
                for k in range(j):
                    acc -= lo[i, k] * lo[j, k]
                if i == j:
                    lo[i, j] = np.sqrt(acc)
                else:
                    lo[i, j] = acc / lo[j, j]

    @njit(cache=True, nogil=True, error_model="numpy", inline="always")
    def _chol_solve(lo, rhs, out):
        p = lo.shape[0]
        for i in range(p):
            acc = rhs[i]
            for k in range(i):
                acc -= lo[i, k] * out[k]
            out[i] = acc / lo[i, i]
        for i in range(p - 1, -1, -1):
            acc = out[i]
            for k in range(i + 1, p):
                acc -= lo[k, i] * out[k]
            out[i] = acc / lo[i, i]

    @njit(cache=True, nogil=True, error_model="numpy", inline="always")
    def _at_mul(phi, pi, kappa, u, q, out):
        # out[m, b] = kappa[m] * (pi[m] (x) phi[b])' u
        M, nb = out.shape
        r = pi.shape[1]
        pu = np.empty(q)
        for m in range(M):
            for i in range(q):
                acc = 0.0
                for k in range(r):
                    acc += pi[m, k] * u[k * q + i]
                pu[i] = acc
            km = kappa[m]
            for b in range(nb):
                acc = 0.0
                for i in range(q):
                    acc += phi[b, i] * pu[i]
                out[m, b] = km * acc

    @njit(cache=True, nogil=True, error_model="numpy", inline="always")
    def _a_mul(phi, pi, kappa, x_mn, out):
        # out[k*q + i] = sum_m kappa[m] pi[m, k] sum_b x[m, b] phi[b, i]
        M, nb = x_mn.shape
        r = pi.shape[1]
        q = phi.shape[1]
        t = np.dot(x_mn, phi)            # (M, q): big contraction via BLAS
        for k in range(r):
            for i in range(q):
                acc = 0.0
                for m in range(M):
                    acc += kappa[m] * pi[m, k] * t[m, i]
                out[k * q + i] = acc

    @njit(cache=True, nogil=True, error_model="numpy", inline="always")
    def _aqat(phi2, pi, kappa, w_mn, q, nm):
        # nm = sum_m kappa[m]^2 (pi[m] pi[m]') (x) (phi' diag(w[m]) phi)
        M = w_mn.shape[0]
        r = pi.shape[1]
        g = np.dot(w_mn, phi2)           # (M, q*q): big contraction via BLAS
        for k1 in range(r):
            for k2 in range(r):
                for i in range(q):
                    for j in range(q):
                        acc = 0.0
                        for m in range(M):
                            acc += (kappa[m] * kappa[m] * pi[m, k1]
                                    * pi[m, k2] * g[m, i * q + j])
                        nm[k1 * q + i, k2 * q + j] = acc

    @njit(cache=True, nogil=True, error_model="numpy")
    def kernel_grid(phi, phi_t, y, pi_g, kappa_g, tau_g, tol, max_iter):
        G, M, r = pi_g.shape
        nb, q = phi.shape
        p = r * q
        n2 = 2.0 * M * nb

        phi2 = (phi[:, :, None] * phi[:, None, :]).copy().reshape(nb, q * q)

        betas = np.empty((G, p))
        gaps = np.empty(G)
        iters = np.empty(G, dtype=np.int64)
        stats = np.empty(G, dtype=np.int64)

        # scratch shared across grid points
        c = np.empty((M, nb))
        a = np.empty((M, nb))
        s = np.empty((M, nb))
        z = np.empty((M, nb))
        v = np.empty((M, nb))
        ia = np.empty((M, nb))
        is_ = np.empty((M, nb))
        qd = np.empty((M, nb))
        qrt = np.empty((M, nb))
        rt = np.empty((M, nb))
        rd = np.empty((M, nb))
        r1 = np.empty((M, nb))
        da = np.empty((M, nb))
        ds = np.empty((M, nb))
        dz = np.empty((M, nb))
        dv = np.empty((M, nb))
        g4 = np.empty((M, nb))
        g5 = np.empty((M, nb))
        atu = np.empty((M, nb))
        b0 = np.empty(p)
        ra = np.empty(p)
        rhs = np.empty(p)
        u = np.empty(p)
        du = np.empty(p)
        nm = np.empty((p, p))
        lo = np.zeros((p, p))

        for g in range(G):
            pi = pi_g[g]
            kappa = kappa_g[g]
            tau = tau_g[g]

            sum_abs_c = 0.0
            for m in range(M):
                km = kappa[m]
                am = 1.0 - tau[m]
                for b in range(nb):
                    c[m, b] = km * y[b]
                    a[m, b] = am
                    s[m, b] = tau[m]
                    qd[m, b] = am * tau[m]
                    qrt[m, b] = am * tau[m] * km * y[b]
                    sum_abs_c += abs(km * y[b])
            _a_mul(phi, pi, kappa, a, b0)

            # dual start from a weighted least-squares fit
            _aqat(phi2, pi, kappa, qd, q, nm)
            reg = 1e-11 * (1.0 + np.trace(nm) / p)
            for i in range(p):
                nm[i, i] += reg
            _chol(nm, lo)
            _a_mul(phi, pi, kappa, qrt, rhs)
            _chol_solve(lo, rhs, u)

            _at_mul(phi, pi, kappa, u, q, atu)
            scale = 1.0 + sum_abs_c / n2
            sum_abs_e = 0.0
            for m in range(M):
                for b in range(nb):
                    sum_abs_e += abs(c[m, b] - atu[m, b])
            delta = 0.1 * sum_abs_e / n2 + 1e-4 * scale
            gap = 0.0
            cda = 0.0
            for m in range(M):
                for b in range(nb):
                    e = c[m, b] - atu[m, b]
                    z[m, b] = (e if e > 0.0 else 0.0) + delta
                    v[m, b] = (-e if e < 0.0 else 0.0) + delta
                    gap += a[m, b] * z[m, b] + s[m, b] * v[m, b]
                    cda += c[m, b] * a[m, b]

            status = _STATUS_MAXITER
            niter = 0
            for it in range(max_iter):
                niter = it + 1
                if gap <= tol * (1.0 + abs(cda)):
                    status = _STATUS_OK
                    niter = it
                    break
                mu = gap / n2

                _at_mul(phi, pi, kappa, u, q, atu)
                for m in range(M):
                    for b in range(nb):
                        iamb = 1.0 / a[m, b]
                        ismb = 1.0 / s[m, b]
                        r1mb = 1.0 - a[m, b] - s[m, b]
                        rdmb = c[m, b] - atu[m, b] - v[m, b] + z[m, b]
                        qdmb = 1.0 / (z[m, b] * iamb + v[m, b] * ismb)
                        rtmb = rdmb - z[m, b] + v[m, b] + v[m, b] * ismb * r1mb
                        ia[m, b] = iamb
                        is_[m, b] = ismb
                        r1[m, b] = r1mb
                        rd[m, b] = rdmb
                        qd[m, b] = qdmb
                        rt[m, b] = rtmb
                        qrt[m, b] = qdmb * rtmb

                _aqat(phi2, pi, kappa, qd, q, nm)
                reg = 1e-11 * (1.0 + np.trace(nm) / p)
                for i in range(p):
                    nm[i, i] += reg
                _chol(nm, lo)

                _a_mul(phi, pi, kappa, a, ra)
                for i in range(p):
                    ra[i] = b0[i] - ra[i]
                _a_mul(phi, pi, kappa, qrt, rhs)
                for i in range(p):
                    rhs[i] -= ra[i]
                _chol_solve(lo, rhs, du)
                _at_mul(phi, pi, kappa, du, q, atu)

                ap = 1.0
                ad = 1.0
                s00 = 0.0
                s10 = 0.0
                s01 = 0.0
                s11 = 0.0
                for m in range(M):
                    for b in range(nb):
                        damb = qd[m, b] * (rt[m, b] - atu[m, b])
                        dsmb = r1[m, b] - damb
                        dzmb = -z[m, b] - z[m, b] * ia[m, b] * damb
                        dvmb = -v[m, b] - v[m, b] * is_[m, b] * dsmb
                        da[m, b] = damb
                        ds[m, b] = dsmb
                        dz[m, b] = dzmb
                        dv[m, b] = dvmb
                        s00 += a[m, b] * z[m, b] + s[m, b] * v[m, b]
                        s10 += damb * z[m, b] + dsmb * v[m, b]
                        s01 += a[m, b] * dzmb + s[m, b] * dvmb
                        s11 += damb * dzmb + dsmb * dvmb
                        if damb < 0.0:
                            cand = -a[m, b] / damb
                            if cand < ap:
                                ap = cand
                        if dsmb < 0.0:
                            cand = -s[m, b] / dsmb
                            if cand < ap:
                                ap = cand
                        if dzmb < 0.0:
                            cand = -z[m, b] / dzmb
                            if cand < ad:
                                ad = cand
                        if dvmb < 0.0:
                            cand = -v[m, b] / dvmb
                            if cand < ad:
                                ad = cand
                ap = min(1.0, 0.9995 * ap)
                ad = min(1.0, 0.9995 * ad)

                # gap after the affine step, bilinear in (ap, ad)
                gap_aff = s00 + ap * s10 + ad * s01 + ap * ad * s11
                sigma = (gap_aff / gap) ** 3
                if sigma < 1e-8:
                    sigma = 1e-8
                elif sigma > 1.0:
                    sigma = 1.0

                for m in range(M):
                    for b in range(nb):
                        g4mb = sigma * mu - a[m, b] * z[m, b] - da[m, b] * dz[m, b]
                        g5mb = sigma * mu - s[m, b] * v[m, b] - ds[m, b] * dv[m, b]
                        rtmb = (rd[m, b] + g4mb * ia[m, b] - g5mb * is_[m, b]
                                + v[m, b] * is_[m, b] * r1[m, b])
                        g4[m, b] = g4mb
                        g5[m, b] = g5mb
                        rt[m, b] = rtmb
                        qrt[m, b] = qd[m, b] * rtmb

                _a_mul(phi, pi, kappa, qrt, rhs)
                for i in range(p):
                    rhs[i] -= ra[i]
                _chol_solve(lo, rhs, du)
                _at_mul(phi, pi, kappa, du, q, atu)

                ap = 1.0
                ad = 1.0
                for m in range(M):
                    for b in range(nb):
                        damb = qd[m, b] * (rt[m, b] - atu[m, b])
                        dsmb = r1[m, b] - damb
                        dzmb = (g4[m, b] - z[m, b] * damb) * ia[m, b]
                        dvmb = (g5[m, b] - v[m, b] * dsmb) * is_[m, b]
                        da[m, b] = damb
                        ds[m, b] = dsmb
                        dz[m, b] = dzmb
                        dv[m, b] = dvmb
                        if damb < 0.0:
                            cand = -a[m, b] / damb
                            if cand < ap:
                                ap = cand
                        if dsmb < 0.0:
                            cand = -s[m, b] / dsmb
                            if cand < ap:
                                ap = cand
                        if dzmb < 0.0:
                            cand = -z[m, b] / dzmb
                            if cand < ad:
                                ad = cand
                        if dvmb < 0.0:
                            cand = -v[m, b] / dvmb
                            if cand < ad:
                                ad = cand
                ap = min(1.0, 0.9995 * ap)
                ad = min(1.0, 0.9995 * ad)

                gap = 0.0
                cda = 0.0
                for m in range(M):
                    for b in range(nb):
                        amb = a[m, b] + ap * da[m, b]
                        smb = s[m, b] + ap * ds[m, b]
                        zmb = z[m, b] + ad * dz[m, b]
                        vmb = v[m, b] + ad * dv[m, b]
                        a[m, b] = amb if amb > 1e-14 else 1e-14
                        s[m, b] = smb if smb > 1e-14 else 1e-14
                        z[m, b] = zmb if zmb > 1e-14 else 1e-14
                        v[m, b] = vmb if vmb > 1e-14 else 1e-14
                        gap += a[m, b] * z[m, b] + s[m, b] * v[m, b]
                        cda += c[m, b] * a[m, b]
                for i in range(p):
                    u[i] += ad * du[i]

            for i in range(p):
                betas[g, i] = u[i]
            gaps[g] = gap
            iters[g] = niter
            stats[g] = status

        return betas, gaps, iters, stats

    return kernel_grid


_kernel_numba_grid = _build_numba_grid_kernel() if HAS_NUMBA else None


def active_backend():
    return "numba" if USE_NUMBA else "numpy"


def _validate(phi, y, pi_g, kappa_g, tau_g):
    if phi.shape[0] != y.size:
        raise ValueError("phi and y disagree on the number of observations")
    if not (pi_g.shape[0] == kappa_g.shape[0] == tau_g.shape[0]
            and pi_g.shape[1] == kappa_g.shape[1] == tau_g.shape[1]):
        raise ValueError("pi, kappa, tau disagree on the grid/node layout")
    if np.any(kappa_g <= 0.0):
        raise ValueError("quadrature weights must be positive")
    if np.any((tau_g <= 0.0) | (tau_g >= 1.0)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")


def solve_check_lp_grid(phi, y, pi_g, kappa_g, tau_g, tol=1e-8, max_iter=100,
                        backend=None):
    """Minimise the discretised check objective for a batch of grid points.

    Parameters
    ----------
    phi : (nb, q) per-observation regressors, shared across grid points
    y : (nb,) responses
    pi_g : (G, M, r) quantile-level polynomial rows pi(h t_m) per grid point
    kappa_g : (G, M) positive quadrature-times-kernel weights
    tau_g : (G, M) quantile levels in (0, 1)
    backend : force "numba" or "numpy"; default follows the env flag

    Returns
    -------
    betas : (G, r*q) coefficient vectors
    info : dict of per-point arrays gap, iters, converged
    """
    phi = np.ascontiguousarray(np.atleast_2d(np.asarray(phi, dtype=float)))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    pi_g = np.ascontiguousarray(np.asarray(pi_g, dtype=float))
    kappa_g = np.ascontiguousarray(np.asarray(kappa_g, dtype=float))
    tau_g = np.ascontiguousarray(np.asarray(tau_g, dtype=float))
    _validate(phi, y, pi_g, kappa_g, tau_g)
    kappa_g = kappa_g / kappa_g.sum(axis=1)[:, None]  # scale-invariant minimiser
    phi_t = np.ascontiguousarray(phi.T)

    use_numba = USE_NUMBA if backend is None else (backend == "numba")
    if use_numba and not HAS_NUMBA:
        raise SolverError("numba backend requested but numba is unavailable")
    kern = _kernel_numba_grid if use_numba else _grid_numpy
    betas, gaps, iters, stats = kern(phi, phi_t, y, pi_g, kappa_g, tau_g,
                                     float(tol), int(max_iter))
    return betas, {"gap": gaps, "iters": iters, "converged": stats == _STATUS_OK}


def solve_check_lp(phi, y, pi, kappa, tau, tol=1e-8, max_iter=100, backend=None):
    """Single-problem convenience wrapper around `solve_check_lp_grid`."""
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    kappa = np.asarray(kappa, dtype=float).reshape(1, -1)
    tau = np.asarray(tau, dtype=float).reshape(1, -1)
    betas, info = solve_check_lp_grid(phi, y, pi[None, :, :], kappa, tau,
                                      tol=tol, max_iter=max_iter, backend=backend)
    return betas[0], {"gap": float(info["gap"][0]), "iters": int(info["iters"][0]),
                      "converged": bool(info["converged"][0])}
