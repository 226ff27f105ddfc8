"""Bounded-coordinate simulation engine.

Simulating the networked estimator directly in its stacked coordinates is
numerically hopeless over long horizons when the plant is unstable: states
grow like rho(A)^k, so float64 rounding in the construction residuals is
amplified without bound (and the raw states eventually overflow).  This
engine simulates algebraically equivalent deviation coordinates, all of which
stay bounded:

* ``d_i   = eta_i - mean_j eta_j``  (consensus deviations, re-centered each
  step since their exact mean is zero),
* ``eps_i = eta^_i - eta_i``        (broadcast gaps, reset at triggers),
* ``eps_app_i = G~_i x~ - xi^_i``   (local filter innovation state, where
  G~_i = [G_i, 0] solves G_i A_u = S G_i with beta' G_i = C~_i,u A_u in the
  split coordinates x~ = Z x),
* ``e_bar = x^ - x``                (centralized filter error),
* the stable plant block ``x~_s``.

Every per-node output (estimation error, consensus deviation, trigger gap,
innovation) is an exact function of these bounded states, so rounding error
never compounds along the unstable mode.  The same step is implemented twice:
a numba kernel for speed and a vectorized numpy twin, selected by the
ETDKF_BACKEND environment variable (auto/numba/numpy).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .decomp import Decomposition, _constrained_sylvester_multi
from .errors import ConfigError, NoSolution
from .model import LtiSystem, SensorNetwork, spectral_split
from .triggers import TriggerSpec

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but keep the twin usable
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


VARIANT_CODES = {"full": 0, "static_time": 1, "static_state": 2, "dynamic": 3}


def default_backend() -> str:
    """Resolve ETDKF_BACKEND (auto/numba/numpy) to a concrete backend."""
    choice = os.environ.get("ETDKF_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ConfigError(f"ETDKF_BACKEND must be auto, numba or numpy, got {choice!r}")
    if choice == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if choice == "numba" and not HAS_NUMBA:
        raise ConfigError("ETDKF_BACKEND=numba but numba is not importable")
    return choice


@dataclass(frozen=True, eq=False)
class RunOperators:
    """All precomputed arrays one simulation run needs."""

    dec: Decomposition
    A: np.ndarray
    C: np.ndarray
    adjacency: np.ndarray
    degrees: np.ndarray
    split: np.ndarray          # Z with x~ = Z x
    split_inv: np.ndarray
    n_unstable: int
    A_u: np.ndarray
    A_s: np.ndarray
    csas: np.ndarray           # rows C~_{i,s} A_s
    gu: np.ndarray             # (m, n, n_u) stack of G_i
    kc_minus_i: np.ndarray     # KC - I
    x0_factor: np.ndarray
    q_factor: np.ndarray
    r_factor: np.ndarray


def _psd_factor(M: np.ndarray) -> np.ndarray:
    """Symmetric factor F with F F' = M for PSD M (eigh based, deterministic)."""
    vals, vecs = np.linalg.eigh(M)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def build_run_operators(sys: LtiSystem, net: SensorNetwork, dec: Decomposition) -> RunOperators:
    """Precompute the split coordinates and per-node operators for the engine."""
    Z, blockA, nu = spectral_split(sys.A)
    Zinv = np.linalg.inv(Z)
    Ct = net.C @ Zinv
    Au = blockA[:nu, :nu]
    As = blockA[nu:, nu:]
    csas = Ct[:, nu:] @ As
    if nu:
        qcols = (Ct[:, :nu] @ Au).T  # column i = (C~_{i,u} A_u)'
        mats = _constrained_sylvester_multi(dec.S.T, Au.T, dec.beta, qcols)
        gu = np.stack([W.T for W in mats])
        for i, G in enumerate(gu):
            # G solves G A_u = S G with beta' G = C~_{i,u} A_u
            r1 = np.linalg.norm(G @ Au - dec.S @ G)
            r2 = np.linalg.norm(dec.beta @ G - Ct[i, :nu] @ Au)
            if max(r1, r2) > 1e-8 * (1.0 + np.linalg.norm(G)):
                raise NoSolution("local innovation operator residual too large")
    else:
        gu = np.zeros((net.m, sys.n, 0))
    return RunOperators(
        dec=dec,
        A=sys.A,
        C=net.C,
        adjacency=net.adjacency,
        degrees=net.adjacency.sum(axis=1),
        split=Z,
        split_inv=Zinv,
        n_unstable=int(nu),
        A_u=Au,
        A_s=As,
        csas=csas,
        gu=gu,
        kc_minus_i=dec.K @ net.C - np.eye(sys.n),
        x0_factor=_psd_factor(sys.x0_cov),
        q_factor=_psd_factor(sys.Q),
        r_factor=_psd_factor(net.R),
    )


def draw_noise(ops: RunOperators, horizon: int, master_seed: int, run_index: int):
    """Seeded noise for one run: x0, process noise w, measurement noise v.

    The generator is counter-based (Philox) keyed by (master_seed, run_index),
    so runs are reproducible independently of execution order.  Draw order is
    fixed: x0, then w row by row, then v row by row.
    """
    key = np.array([master_seed % 2**64, run_index % 2**64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    n = ops.A.shape[0]
    m = ops.C.shape[0]
    x0 = ops.x0_factor @ gen.standard_normal(n)
    w = gen.standard_normal((horizon, n)) @ ops.q_factor.T
    v = gen.standard_normal((horizon, m)) @ ops.r_factor.T
    return x0, w, v


def _trigger_params(spec: TriggerSpec):
    return (
        VARIANT_CODES[spec.variant],
        float(spec.c0),
        float(spec.c1),
        float(spec.alpha),
        float(spec.ell),
        float(spec.c),
        float(spec.rate),
        float(spec.beta_i),
        float(spec.theta_i),
        float(spec.chi0),
    )


def run_deviation(
    ops: RunOperators,
    spec: TriggerSpec,
    horizon: int,
    master_seed: int,
    run_index: int,
    absolute_state: bool = True,
    backend: str | None = None,
) -> dict:
    """One full event-triggered run in deviation coordinates.

    With ``absolute_state=False`` the unbounded trace columns (truth,
    centralized estimate, per-node estimates, consensus gap) are left at zero
    and the truth/average co-simulations are skipped; only time-independent
    thresholds are allowed then, since the stored broadcast values that feed
    q_hat live at the absolute state scale.
    """
    if not absolute_state and spec.variant in ("static_state", "dynamic"):
        raise ConfigError("state-dependent triggers need absolute_state=True")
    backend = backend or default_backend()
    dec = ops.dec
    n, m, r = dec.n, dec.m, dec.r
    nu = ops.n_unstable
    x0, w, v = draw_noise(ops, horizon, master_seed, run_index)
    wt = w @ ops.split.T
    cw = w @ ops.C.T
    xt0 = ops.split @ x0

    out = {
        "triggered": np.zeros((horizon, m), dtype=np.uint8),
        "eps_sq": np.zeros((horizon, m)),
        "err_sq": np.zeros((horizon, m)),
        "cons_dev_sq": np.zeros((horizon, m)),
        "h": np.zeros((horizon, m)),
        "z": np.zeros((horizon, m)),
        "x": np.zeros((horizon, n)),
        "x_hat": np.zeros((horizon, n)),
        "x_breve": np.zeros((horizon, m, n)),
        "avg_gap": np.zeros(horizon),
    }
    args = (
        int(nu),
        np.ascontiguousarray(dec.closed_loop),
        np.ascontiguousarray(dec.lambda_mat),
        np.ascontiguousarray(dec.S),
        np.ascontiguousarray(dec.K),
        np.ascontiguousarray(dec.Ktilde),
        np.ascontiguousarray(dec.V),
        np.ascontiguousarray(dec.beta),
        np.ascontiguousarray(dec.gamma),
        np.ascontiguousarray(ops.csas),
        np.ascontiguousarray(ops.gu),
        np.ascontiguousarray(ops.adjacency),
        np.ascontiguousarray(ops.degrees),
        np.ascontiguousarray(ops.A_u),
        np.ascontiguousarray(ops.A_s),
        np.ascontiguousarray(ops.split_inv),
        np.ascontiguousarray(ops.kc_minus_i),
        np.ascontiguousarray(wt),
        np.ascontiguousarray(w),
        np.ascontiguousarray(v),
        np.ascontiguousarray(cw),
        np.ascontiguousarray(x0),
        np.ascontiguousarray(xt0),
        *_trigger_params(spec),
        bool(absolute_state),
        out["triggered"],
        out["eps_sq"],
        out["err_sq"],
        out["cons_dev_sq"],
        out["h"],
        out["z"],
        out["x"],
        out["x_hat"],
        out["x_breve"],
        out["avg_gap"],
    )
    if backend == "numba":
        _deviation_loop_numba(*args)
    else:
        _deviation_loop_numpy(*args)
    return out


def _deviation_loop_numpy(
    nu, acl, lam, S, K, Ktilde, V, beta, gamma, csas, gu, adj, deg,
    Au, As, Zinv, KCmI, wt, w, v, cw, x0, xt0,
    variant, c0, c1, alpha, ell, c_sched, rate, beta_d, theta_d, chi0,
    absolute, triggered, eps_sq, err_sq, cons_dev_sq, h_arr, z_arr,
    x_out, xhat_out, x_breve, avg_gap,
):
    horizon, m = v.shape
    n = acl.shape[0]
    r = Ktilde.shape[1]
    ns = n - nu

    xs = xt0[nu:].copy()
    xu = xt0[:nu].copy()
    epsapp = gu @ xu if nu else np.zeros((m, n))
    d0 = np.zeros((m, n))
    dblk = np.zeros((m, r, n))
    e0 = np.zeros((m, n))
    eblk = np.zeros((m, r, n))
    ebar = -x0.copy()
    nb0 = np.zeros(n)
    nbblk = np.zeros((r, n))
    chi = np.full(m, chi0)
    frozen = np.zeros((m, r))

    for k in range(horizon):
        wk = w[k]
        wtk = wt[k]
        s_vec = csas @ xs + cw[k] + v[k] if ns else cw[k] + v[k]
        z = epsapp @ beta + s_vec
        epsapp = epsapp @ lam.T - np.outer(s_vec, np.ones(n))
        if nu:
            epsapp += gu @ wtk[:nu]

        phi = (dblk + eblk) @ gamma                    # (m, r)
        u = adj @ phi - deg[:, None] * phi
        kz_mean = K @ z / m
        vz = V @ z                                     # (r,)
        vz_mean = vz / m

        db = dblk @ beta                               # (m, r)
        d0_next = d0 @ acl.T + db @ Ktilde.T + (K * z).T - kz_mean
        shift_d = V * z - vz_mean[:, None] + u.T       # (r, m)
        dblk_next = np.einsum("ij,mbj->mbi", S, dblk) + shift_d.T[:, :, None]
        d0_next -= d0_next.mean(axis=0)
        dblk_next -= dblk_next.mean(axis=0)

        eb = eblk @ beta
        e0_next = e0 @ acl.T + eb @ Ktilde.T - (K * z).T
        shift_e = -(V * z) - u.T
        eblk_next = np.einsum("ij,mbj->mbi", S, eblk) + shift_e.T[:, :, None]

        ebar = acl @ ebar + KCmI @ wk + K @ v[k]
        xs = As @ xs + wtk[nu:]
        if absolute:
            nb0 = acl @ nb0 + Ktilde @ (nbblk @ beta) + kz_mean
            nbblk = nbblk @ S.T + vz_mean[:, None]
            xu = Au @ xu + wtk[:nu]

        gap_sq = (e0_next * e0_next).sum(axis=1) + (eblk_next * eblk_next).sum(axis=(1, 2))
        kk = k + 1
        if variant == 0:
            h = -np.ones(m)
        elif variant == 1:
            h = np.full(m, c0 + c1 * alpha**kk)
        else:
            a_k = c_sched * rate**kk
            diffs = frozen[:, None, :] - frozen[None, :, :]
            qd = np.minimum(0.5 * (adj * (diffs * diffs).sum(axis=2)).sum(axis=1), ell)
            if variant == 2:
                h = a_k * qd
            else:
                h = chi / theta_d + a_k * qd
        fired = gap_sq - h >= 0.0
        if variant == 3:
            surviving = np.where(fired, 0.0, gap_sq)
            chi = beta_d * chi + a_k * qd - surviving
        e0_next[fired] = 0.0
        eblk_next[fired] = 0.0
        if absolute and fired.any():
            new_frozen = (nbblk[None, :, :] + dblk_next) @ gamma
            frozen[fired] = new_frozen[fired]

        d0, dblk, e0, eblk = d0_next, dblk_next, e0_next, eblk_next

        triggered[k] = fired
        eps_sq[k] = np.where(fired, 0.0, gap_sq)
        h_arr[k] = h
        z_arr[k] = z
        err = m * d0 + ebar
        err_sq[k] = (err * err).sum(axis=1)
        cons_dev_sq[k] = (d0 * d0).sum(axis=1) + (dblk * dblk).sum(axis=(1, 2))
        if absolute:
            xt = np.concatenate([xu, xs])
            x = Zinv @ xt
            xh = x + ebar
            x_out[k] = x
            xhat_out[k] = xh
            x_breve[k] = m * (nb0 + d0)
            avg_gap[k] = np.linalg.norm(m * nb0 + d0.sum(axis=0) - xh)
    return


@njit(cache=True)
def _deviation_loop_numba_impl(
    nu, acl, lam, S, K, Ktilde, V, beta, gamma, csas, gu, adj, deg,
    Au, As, Zinv, KCmI, wt, w, v, cw, x0, xt0,
    variant, c0, c1, alpha, ell, c_sched, rate, beta_d, theta_d, chi0,
    absolute, triggered, eps_sq, err_sq, cons_dev_sq, h_arr, z_arr,
    x_out, xhat_out, x_breve, avg_gap,
):
    horizon, m = v.shape
    n = acl.shape[0]
    r = Ktilde.shape[1]
    ns = n - nu

    xs = xt0[nu:].copy()
    xu = xt0[:nu].copy()
    epsapp = np.zeros((m, n))
    if nu > 0:
        for i in range(m):
            epsapp[i] = np.dot(gu[i], xu)
    d0 = np.zeros((m, n))
    dblk = np.zeros((m, r, n))
    e0 = np.zeros((m, n))
    eblk = np.zeros((m, r, n))
    ebar = -x0.copy()
    nb0 = np.zeros(n)
    nbblk = np.zeros((r, n))
    chi = np.full(m, chi0)
    frozen = np.zeros((m, r))

    s_vec = np.zeros(m)
    z = np.zeros(m)
    phi = np.zeros((m, r))
    u = np.zeros((m, r))
    h = np.zeros(m)
    qd = np.zeros(m)

    for k in range(horizon):
        wk = w[k]
        wtk = wt[k]
        for i in range(m):
            si = cw[k, i] + v[k, i]
            if ns > 0:
                si += np.dot(csas[i], xs)
            s_vec[i] = si
            z[i] = np.dot(beta, epsapp[i]) + si
        epsapp_next = np.zeros((m, n))
        for i in range(m):
            epsapp_next[i] = np.dot(lam, epsapp[i]) - s_vec[i] * np.ones(n)
            if nu > 0:
                epsapp_next[i] += np.dot(gu[i], wtk[:nu])
        epsapp = epsapp_next

        for i in range(m):
            for b in range(r):
                phi[i, b] = np.dot(gamma, dblk[i, b] + eblk[i, b])
        for i in range(m):
            for b in range(r):
                acc = 0.0
                for j in range(m):
                    acc += adj[i, j] * phi[j, b]
                u[i, b] = acc - deg[i] * phi[i, b]

        kz_mean = np.dot(K, z) / m
        vz = np.dot(V, z)

        d0_next = np.zeros((m, n))
        dblk_next = np.zeros((m, r, n))
        e0_next = np.zeros((m, n))
        eblk_next = np.zeros((m, r, n))
        for i in range(m):
            db = np.zeros(r)
            eb = np.zeros(r)
            for b in range(r):
                db[b] = np.dot(beta, dblk[i, b])
                eb[b] = np.dot(beta, eblk[i, b])
            d0_next[i] = np.dot(acl, d0[i]) + np.dot(Ktilde, db) + K[:, i] * z[i] - kz_mean
            e0_next[i] = np.dot(acl, e0[i]) + np.dot(Ktilde, eb) - K[:, i] * z[i]
            for b in range(r):
                sd = V[b, i] * z[i] - vz[b] / m + u[i, b]
                se = -V[b, i] * z[i] - u[i, b]
                dblk_next[i, b] = np.dot(S, dblk[i, b]) + sd * np.ones(n)
                eblk_next[i, b] = np.dot(S, eblk[i, b]) + se * np.ones(n)
        d0_mean = np.zeros(n)
        dblk_mean = np.zeros((r, n))
        for i in range(m):
            d0_mean += d0_next[i]
            dblk_mean += dblk_next[i]
        d0_mean /= m
        dblk_mean /= m
        for i in range(m):
            d0_next[i] -= d0_mean
            dblk_next[i] -= dblk_mean

        ebar = np.dot(acl, ebar) + np.dot(KCmI, wk) + np.dot(K, v[k])
        xs = np.dot(As, xs) + wtk[nu:]
        if absolute:
            nbb = np.zeros(r)
            for b in range(r):
                nbb[b] = np.dot(beta, nbblk[b])
            nb0 = np.dot(acl, nb0) + np.dot(Ktilde, nbb) + kz_mean
            nbblk_next = np.zeros((r, n))
            for b in range(r):
                nbblk_next[b] = np.dot(S, nbblk[b]) + (vz[b] / m) * np.ones(n)
            nbblk = nbblk_next
            xu = np.dot(Au, xu) + wtk[:nu]

        kk = k + 1
        a_k = c_sched * rate**kk
        if variant >= 2:
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    if adj[i, j] != 0.0:
                        dsq = 0.0
                        for b in range(r):
                            diff = frozen[j, b] - frozen[i, b]
                            dsq += diff * diff
                        acc += adj[i, j] * dsq
                qd[i] = min(0.5 * acc, ell)
        for i in range(m):
            gap = 0.0
            for jj in range(n):
                gap += e0_next[i, jj] * e0_next[i, jj]
            for b in range(r):
                for jj in range(n):
                    gap += eblk_next[i, b, jj] * eblk_next[i, b, jj]
            if variant == 0:
                hi = -1.0
            elif variant == 1:
                hi = c0 + c1 * alpha**kk
            elif variant == 2:
                hi = a_k * qd[i]
            else:
                hi = chi[i] / theta_d + a_k * qd[i]
            fired = gap - hi >= 0.0
            if variant == 3:
                surviving = 0.0 if fired else gap
                chi[i] = beta_d * chi[i] + a_k * qd[i] - surviving
            if fired:
                for jj in range(n):
                    e0_next[i, jj] = 0.0
                for b in range(r):
                    for jj in range(n):
                        eblk_next[i, b, jj] = 0.0
                if absolute:
                    for b in range(r):
                        frozen[i, b] = np.dot(gamma, nbblk[b] + dblk_next[i, b])
                triggered[k, i] = 1
                eps_sq[k, i] = 0.0
            else:
                triggered[k, i] = 0
                eps_sq[k, i] = gap
            h_arr[k, i] = hi
            z_arr[k, i] = z[i]

        d0 = d0_next
        dblk = dblk_next
        e0 = e0_next
        eblk = eblk_next

        for i in range(m):
            acc = 0.0
            for jj in range(n):
                err = m * d0[i, jj] + ebar[jj]
                acc += err * err
            err_sq[k, i] = acc
            acc2 = 0.0
            for jj in range(n):
                acc2 += d0[i, jj] * d0[i, jj]
            for b in range(r):
                for jj in range(n):
                    acc2 += dblk[i, b, jj] * dblk[i, b, jj]
            cons_dev_sq[k, i] = acc2
        if absolute:
            xt = np.zeros(n)
            xt[:nu] = xu
            xt[nu:] = xs
            x = np.dot(Zinv, xt)
            xh = x + ebar
            gapacc = 0.0
            for jj in range(n):
                total = m * nb0[jj]
                for i in range(m):
                    total += d0[i, jj]
                diff = total - xh[jj]
                gapacc += diff * diff
            avg_gap[k] = np.sqrt(gapacc)
            for jj in range(n):
                x_out[k, jj] = x[jj]
                xhat_out[k, jj] = xh[jj]
            for i in range(m):
                for jj in range(n):
                    x_breve[k, i, jj] = m * (nb0[jj] + d0[i, jj])
    return


def _deviation_loop_numba(*args):
    if not HAS_NUMBA:  # pragma: no cover
        raise ConfigError("numba backend requested but numba is unavailable")
    _deviation_loop_numba_impl(*args)
