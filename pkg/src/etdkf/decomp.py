"""Lossless decomposition of the steady-state Kalman filter.

The centralized filter x^(k+1) = (A-KCA) x^(k) + K y(k+1) is rewritten as a
sum of per-sensor filters driven only by local measurements:

* ``build_lambda``: a real modal form of A - KCA with one Jordan block per
  distinct eigenvalue, so (Lambda, 1) is controllable by a single vector.
* ``design_beta_s``: a rank-one update S = Lambda + 1 beta' whose spectrum is
  the plant's unstable eigenvalues plus chosen stable poles.
* ``solve_constrained_sylvester``: the F_i weights with F_i Lambda = (A-KCA) F_i
  and F_i 1 = K_i, so x^ = sum_i F_i xi^_i.
* ``rank_factorize``: K = Ktilde V with Ktilde actual columns of K, fixing the
  broadcast dimension r = rank(K).
* ``solve_mare_gamma``: the synchronization gain from a modified Riccati
  fixed point on S.
* ``assemble_operator``: the stacked operator (H, L, B, T) of the networked
  estimator, with the per-mode stability check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np
import scipy.linalg as sla
import scipy.optimize

from .errors import (
    ControllabilityLost,
    DimensionMismatch,
    MahlerBoundViolated,
    MareDiverged,
    NoSolution,
    PlacementFailed,
    SyncSpectrumUnstable,
    UnstableClosedLoop,
    ZeroGain,
    ZetaInfeasible,
)
from .kalman import KalmanSolution, solve_steady_gain
from .model import LtiSystem, SensorNetwork

_UNIT_CIRCLE_TOL = 1e-8


def match_spectra(computed, targets) -> float:
    """Largest pairing distance between two complex multisets (same size)."""
    a = np.asarray(computed, dtype=complex).ravel()
    b = np.asarray(targets, dtype=complex).ravel()
    if a.size != b.size:
        raise DimensionMismatch("spectra have different sizes")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def _cluster(values, tol):
    """Greedy chain clustering of complex values: list of (mean, count)."""
    vals = sorted(values, key=lambda z: (z.real, z.imag))
    groups = []
    for v in vals:
        if groups and abs(v - groups[-1][-1]) <= tol:
            groups[-1].append(v)
        else:
            groups.append([v])
    return [(sum(g) / len(g), len(g)) for g in groups]


def build_lambda(closed_loop, cluster_tol: float = 1e-7) -> np.ndarray:
    """Real modal form of the closed loop with one block per distinct eigenvalue.

    Eigenvalues closer than ``cluster_tol`` are merged into a single real
    Jordan block (complex pairs become 2x2 rotation blocks), which keeps
    (Lambda, ones) controllable.  Raises ControllabilityLost if the built
    matrix fails the controllability margin, UnstableClosedLoop if the input
    is not strictly stable.
    """
    Acl = np.asarray(closed_loop, dtype=float)
    n = Acl.shape[0]
    eig = np.linalg.eigvals(Acl)
    if np.abs(eig).max(initial=0.0) >= 1.0:
        raise UnstableClosedLoop("closed loop is not strictly stable")

    real_vals = [complex(z.real, 0.0) for z in eig if abs(z.imag) <= cluster_tol]
    cplx_vals = [z for z in eig if z.imag > cluster_tol]

    blocks = []
    for val, count in _cluster(real_vals, cluster_tol):
        J = np.eye(count) * val.real
        for i in range(count - 1):
            J[i, i + 1] = 1.0
        blocks.append((val.real, 0.0, J))
    for val, count in _cluster(cplx_vals, cluster_tol):
        a, b = val.real, val.imag
        J = np.zeros((2 * count, 2 * count))
        for i in range(count):
            J[2 * i: 2 * i + 2, 2 * i: 2 * i + 2] = [[a, b], [-b, a]]
            if i + 1 < count:
                J[2 * i: 2 * i + 2, 2 * i + 2: 2 * i + 4] = np.eye(2)
        blocks.append((a, b, J))

    blocks.sort(key=lambda t: (t[0], t[1]))
    lam = np.zeros((n, n))
    pos = 0
    for _, _, J in blocks:
        w = J.shape[0]
        if pos + w > n:
            raise ControllabilityLost("eigenvalue clustering lost conjugate pairing")
        lam[pos: pos + w, pos: pos + w] = J
        pos += w
    if pos != n:
        raise ControllabilityLost("eigenvalue clustering lost conjugate pairing")

    if match_spectra(np.linalg.eigvals(lam), eig) > 1e-6:
        raise ControllabilityLost("modal form drifted from the closed-loop spectrum")
    _check_single_vector_controllable(lam, np.ones(n))
    return lam


def _check_single_vector_controllable(M, b, tol: float = 1e-8) -> None:
    """PBH margin of the pair (M, b); raises ControllabilityLost when flat."""
    n = M.shape[0]
    scale = max(1.0, np.abs(M).max(initial=0.0))
    for lam in np.unique(np.round(np.linalg.eigvals(M), 9)):
        pencil = np.hstack([M - lam * np.eye(n), b.reshape(-1, 1)])
        if np.linalg.svd(pencil, compute_uv=False)[-1] < tol * scale:
            raise ControllabilityLost(
                "pair is too close to uncontrollable (clustered eigenvalues)"
            )


def default_stable_poles(count: int, lambda_mat=None) -> np.ndarray:
    """Evenly spaced poles in [0.1, 0.4], nudged off existing eigenvalues."""
    poles = np.linspace(0.1, 0.4, count) if count else np.zeros(0)
    taken = (
        list(np.linalg.eigvals(lambda_mat)) if lambda_mat is not None else []
    )
    out = []
    for p in poles:
        guard = 0
        while taken and min(abs(p - t) for t in taken) < 1e-3:
            p += 1e-3
            guard += 1
            if guard > 1000:
                raise PlacementFailed("could not find a free default pole")
        out.append(p)
        taken.append(complex(p))
    return np.asarray(out, dtype=float)


def _spectrum_stable_poles(lambda_mat, unstable_eigs) -> np.ndarray:
    """Stable targets close to Lambda's own spectrum.

    Single-vector placement is only well conditioned when the rank-one update
    barely moves the spectrum, so the default keeps Lambda's eigenvalues,
    drops the one nearest each unstable target (that is the one being moved),
    and nudges the rest slightly inward so no target sits exactly on an
    eigenvalue of Lambda.
    """
    spectrum = np.linalg.eigvals(np.asarray(lambda_mat, dtype=float))
    eigs = list(spectrum)
    for u in np.asarray(unstable_eigs, dtype=complex).ravel():
        if not eigs:
            raise PlacementFailed("more unstable targets than eigenvalues")
        eigs.pop(int(np.argmin([abs(u - e) for e in eigs])))

    # keep conjugate symmetry: nudge one representative per pair, emit both
    reps: list[tuple[complex, bool]] = []
    skip = np.zeros(len(eigs), dtype=bool)
    for idx, e in enumerate(eigs):
        if skip[idx]:
            continue
        if abs(e.imag) <= 1e-12:
            reps.append((complex(e.real), False))
            continue
        partner = None
        for jdx in range(idx + 1, len(eigs)):
            if not skip[jdx] and abs(eigs[jdx] - e.conjugate()) < 1e-9:
                partner = jdx
                break
        if partner is None:
            raise PlacementFailed("stable spectrum lost conjugate pairing")
        skip[partner] = True
        reps.append((e if e.imag > 0 else e.conjugate(), True))

    out: list[complex] = []
    taken = list(spectrum)
    for s, is_pair in reps:
        guard = 0
        while True:
            s = s * (1.0 - 1e-3) if abs(s) >= 0.1 else s - 1e-3
            near = min((abs(s - t) for t in taken), default=np.inf)
            if is_pair:
                near = min(near, min((abs(s.conjugate() - t) for t in taken), default=np.inf))
            if near >= 1e-4:
                break
            guard += 1
            if guard > 1000:
                raise PlacementFailed("could not derive free stable poles")
        if is_pair:
            out += [s, s.conjugate()]
            taken += [s, s.conjugate()]
        else:
            out.append(s)
            taken.append(s)
    arr = np.asarray(out, dtype=complex)
    return arr.real if np.allclose(arr.imag, 0.0) else arr


def _group_targets(targets, tol: float = 1e-9):
    """Cluster targets into (value, multiplicity) with conjugate pairing.

    Returns representatives with nonnegative imaginary part; complex entries
    must come in conjugate pairs.
    """
    targets = np.asarray(targets, dtype=complex)
    upper = [z for z in targets if z.imag > tol]
    lower = [z.conjugate() for z in targets if z.imag < -tol]
    reals = [complex(z.real) for z in targets if abs(z.imag) <= tol]
    if len(upper) != len(lower):
        raise PlacementFailed("complex target poles must come in conjugate pairs")
    if upper and match_spectra(upper, lower) > 10 * tol:
        raise PlacementFailed("complex target poles must come in conjugate pairs")
    return _cluster(reals, tol) + _cluster(upper, tol)


def design_beta_s(lambda_mat, unstable_eigs, stable_poles=None):
    """Choose beta so S = Lambda + 1 beta' has the prescribed spectrum.

    The spectrum of S is the multiset ``unstable_eigs`` (the plant's unstable
    block) plus stable poles (defaults from ``default_stable_poles``).  beta
    solves the single-vector interpolation conditions
    beta' (sI - Lambda)^-1 1 = 1 per distinct target (with derivative
    conditions for multiple targets), then is Newton-refined.  Verified by an
    eigensolve within 1e-6; raises PlacementFailed otherwise.
    """
    lam = np.asarray(lambda_mat, dtype=float)
    n = lam.shape[0]
    unstable = np.asarray(unstable_eigs, dtype=complex).ravel()
    count = n - unstable.size
    if count < 0:
        raise DimensionMismatch("more unstable eigenvalues than states")
    if stable_poles is None:
        # evenly spread poles first; when the spectrum move is too large for
        # a well-conditioned rank-one update, retry near Lambda's own spectrum
        try:
            stable = default_stable_poles(count, lam).astype(complex)
            return _place_single_vector(lam, unstable, stable)
        except PlacementFailed:
            stable = np.asarray(_spectrum_stable_poles(lam, unstable), dtype=complex)
            return _place_single_vector(lam, unstable, stable)
    stable = np.asarray(stable_poles, dtype=complex).ravel()
    if stable.size != count:
        raise PlacementFailed(
            f"need exactly {count} stable poles, got {stable.size}"
        )
    if stable.size and np.abs(stable).max() >= 1 - 1e-9:
        raise PlacementFailed("stable poles must lie strictly inside the unit circle")
    return _place_single_vector(lam, unstable, stable)


def _place_single_vector(lam: np.ndarray, unstable: np.ndarray, stable: np.ndarray):
    """beta and S for one prescribed target multiset; raises PlacementFailed."""
    n = lam.shape[0]
    targets = np.concatenate([unstable, stable])
    groups = _group_targets(targets)

    ones = np.ones(n)
    rows, rhs = [], []
    for value, mult in groups:
        shifted = value * np.eye(n) - lam
        vec = ones.astype(complex)
        for j in range(1, mult + 1):
            vec = np.linalg.solve(shifted, vec)
            want = 1.0 if j == 1 else 0.0
            if abs(value.imag) > 1e-9:
                rows += [vec.real, vec.imag]
                rhs += [want, 0.0]
            else:
                rows.append(vec.real)
                rhs.append(want)
    M = np.asarray(rows)
    if M.shape[0] != n:
        raise PlacementFailed("interpolation system is not square; bad target set")
    beta = np.linalg.lstsq(M, np.asarray(rhs), rcond=None)[0]

    simple = all(mult == 1 for _, mult in groups) and _min_gap(targets) > 1e-6
    for _ in range(8):
        S = lam + np.outer(ones, beta)
        err = match_spectra(np.linalg.eigvals(S), targets)
        if err <= 1e-10 or not simple:
            break
        beta = _newton_refine(lam, beta, targets)
    S = lam + np.outer(ones, beta)
    err = match_spectra(np.linalg.eigvals(S), targets)
    if err > 1e-6:
        raise PlacementFailed(f"pole placement missed targets by {err:.2e}")
    _check_single_vector_controllable(S, ones)
    return beta, S


def _min_gap(targets) -> float:
    t = np.asarray(targets, dtype=complex)
    if t.size < 2:
        return np.inf
    d = np.abs(t[:, None] - t[None, :])
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def _newton_refine(lam, beta, targets):
    """One Newton step on the eigenvalue mismatch via eigenvector sensitivities."""
    n = lam.shape[0]
    ones = np.ones(n)
    S = lam + np.outer(ones, beta)
    vals, vl, vr = sla.eig(S, left=True, right=True)
    t = np.asarray(targets, dtype=complex)
    cost = np.abs(vals[:, None] - t[None, :])
    rows_idx, cols_idx = scipy.optimize.linear_sum_assignment(cost)
    Jrows, resid = [], []
    for i, j in zip(rows_idx, cols_idx):
        li, ri = vl[:, i], vr[:, i]
        denom = np.vdot(li, ri)
        if abs(denom) < 1e-14:
            continue
        row = (np.vdot(li, ones) / denom) * ri
        gap = t[j] - vals[i]
        Jrows += [row.real, row.imag]
        resid += [gap.real, gap.imag]
    if not Jrows:
        return beta
    delta = np.linalg.lstsq(np.asarray(Jrows), np.asarray(resid), rcond=None)[0]
    return beta + delta


def solve_constrained_sylvester(X, Y, p, q, rtol: float = 1e-8):
    """Solve T X = Y T subject to T p = q.

    X is nx-by-nx, Y is ny-by-ny, p has length nx and q length ny; the result
    T is ny-by-nx.  Solved as one stacked least-squares system on the
    row-major vectorization; residuals above ``rtol`` raise NoSolution.
    """
    T = _constrained_sylvester_multi(X, Y, p, np.asarray(q, dtype=float).reshape(-1, 1))[0]
    _check_sylvester_residual(T, X, Y, p, q, rtol)
    return T


def _constrained_sylvester_multi(X, Y, p, Qcols):
    """Solve T_j X = Y T_j, T_j p = Qcols[:, j] for all j with one factorization."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    p = np.asarray(p, dtype=float).ravel()
    nx, ny = X.shape[0], Y.shape[0]
    top = np.kron(np.eye(ny), X.T) - np.kron(Y, np.eye(nx))
    bottom = np.kron(np.eye(ny), p.reshape(1, -1))
    M = np.vstack([top, bottom])
    k = Qcols.shape[1]
    rhs = np.vstack([np.zeros((ny * nx, k)), Qcols])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return [sol[:, j].reshape(ny, nx) for j in range(k)]


def _check_sylvester_residual(T, X, Y, p, q, rtol):
    scale = 1.0 + np.linalg.norm(T)
    r1 = np.linalg.norm(T @ X - np.asarray(Y) @ T)
    r2 = np.linalg.norm(T @ np.asarray(p, dtype=float).ravel() - np.asarray(q, dtype=float).ravel())
    if r1 > rtol * scale or r2 > rtol * scale:
        raise NoSolution(
            f"constrained Sylvester residuals too large: {r1:.2e}, {r2:.2e}"
        )


def solve_filter_weights(lambda_mat, closed_loop, K, rtol: float = 1e-8) -> np.ndarray:
    """All F_i with F_i Lambda = closed_loop F_i and F_i 1 = K[:, i].

    Returns an (m, n, n) stack.  One matrix factorization serves all sensors.
    """
    lam = np.asarray(lambda_mat, dtype=float)
    Acl = np.asarray(closed_loop, dtype=float)
    K = np.asarray(K, dtype=float)
    n = lam.shape[0]
    ones = np.ones(n)
    mats = _constrained_sylvester_multi(lam, Acl, ones, K)
    for i, F in enumerate(mats):
        _check_sylvester_residual(F, lam, Acl, ones, K[:, i], rtol)
    return np.stack(mats)


def rank_factorize(K, tol: float = 1e-9):
    """Factor K = Ktilde @ V with Ktilde made of r independent columns of K.

    r is the numerical rank (singular values above ``tol`` relative to the
    largest).  Columns are scanned left to right and kept when they add a new
    direction, so Ktilde holds the first r independent columns and V carries
    an identity sub-block on them.  Falls back to an SVD factorization if the
    selected columns cannot reproduce K.
    """
    K = np.asarray(K, dtype=float)
    sv = np.linalg.svd(K, compute_uv=False)
    if sv.size == 0 or sv[0] <= 0.0:
        raise ZeroGain("gain matrix is zero")
    r = int(np.count_nonzero(sv > tol * sv[0]))
    if r == 0:
        raise ZeroGain("gain matrix has numerical rank zero")
    cols: list[int] = []
    basis = np.zeros((K.shape[0], 0))
    for j in range(K.shape[1]):
        col = K[:, j]
        resid = col - basis @ (basis.T @ col)
        if np.linalg.norm(resid) > tol * sv[0]:
            cols.append(j)
            basis = np.hstack([basis, (resid / np.linalg.norm(resid))[:, None]])
            if len(cols) == r:
                break
    if len(cols) < r:
        _, _, piv = sla.qr(K, mode="economic", pivoting=True)
        cols = sorted(piv[:r])
    Ktilde = K[:, cols].copy()
    V = np.linalg.lstsq(Ktilde, K, rcond=None)[0]
    if np.linalg.norm(Ktilde @ V - K) > 1e-10 * (1.0 + np.linalg.norm(K)):
        U, s, Vt = np.linalg.svd(K, full_matrices=False)
        Ktilde = U[:, :r] * s[:r]
        V = Vt[:r]
        if np.linalg.norm(Ktilde @ V - K) > 1e-10 * (1.0 + np.linalg.norm(K)):
            raise NoSolution("rank factorization failed to reproduce the gain")
    return Ktilde, V


def mahler_measure(M) -> float:
    """Product of eigenvalue moduli on or outside the unit circle (empty = 1)."""
    moduli = np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))
    outside = moduli[moduli >= 1 - 1e-9]
    return float(max(1.0, np.prod(outside))) if outside.size else 1.0


def eigenratio_bound(mu2: float, mu_m: float) -> float:
    """Network bound (1 + mu2/mu_m) / (1 - mu2/mu_m); infinite when mu2 = mu_m."""
    ratio = mu2 / mu_m
    if ratio >= 1.0 - 1e-12:
        return np.inf
    return (1.0 + ratio) / (1.0 - ratio)


def solve_mare_gamma(
    S,
    one_vec,
    mu2: float,
    mu_m: float,
    zeta_override: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
):
    """Synchronization gain from the modified Riccati fixed point on S.

    Iterates P <- S'PS - (1-zeta^2) (S'Pb)(S'Pb)'/(b'Pb) + I from P = I and
    returns (gamma, P, zeta) with gamma = (2/(mu2+mu_m)) (b'PS)/(b'Pb).  The
    Mahler measure of S must lie strictly below the network bound; zeta
    defaults to the geometric mean of the two (inverse), and any override is
    checked for feasibility.
    """
    S = np.asarray(S, dtype=float)
    b = np.asarray(one_vec, dtype=float).ravel()
    mahler = mahler_measure(S)
    bound = eigenratio_bound(mu2, mu_m)
    if not mahler < bound:
        raise MahlerBoundViolated(
            f"Mahler measure {mahler:.6g} is not below the network bound {bound:.6g}"
        )
    if zeta_override is not None:
        zeta = float(zeta_override)
        if zeta <= 0:
            raise ZetaInfeasible("zeta must be positive")
        inv = 1.0 / zeta
        if not (mahler < inv and inv <= bound * (1 + 1e-12)):
            raise ZetaInfeasible(
                f"1/zeta = {inv:.6g} must lie in (Mahler, bound] = ({mahler:.6g}, {bound:.6g}]"
            )
    else:
        inv = 2.0 * mahler if np.isinf(bound) else float(np.sqrt(mahler * bound))
        zeta = 1.0 / inv

    n = S.shape[0]
    P = np.eye(n)
    shrink = 1.0 - zeta * zeta
    for _ in range(max_iter):
        u = S.T @ P @ b
        denom = b @ P @ b
        P_next = S.T @ P @ S - shrink * np.outer(u, u) / denom + np.eye(n)
        P_next = 0.5 * (P_next + P_next.T)
        delta = np.abs(P_next - P).max()
        P = P_next
        if not np.isfinite(delta) or np.trace(P) > 1e12:
            raise MareDiverged("modified Riccati iteration diverged")
        if delta <= tol * (1.0 + np.abs(P).max()):
            break
    else:
        raise MareDiverged("modified Riccati iteration hit the cap")

    u = S.T @ P @ b
    denom = b @ P @ b
    residual = P - (S.T @ P @ S - shrink * np.outer(u, u) / denom)
    if np.linalg.eigvalsh(0.5 * (residual + residual.T)).min() <= 1e-10:
        raise MareDiverged("fixed point does not satisfy the strict inequality")
    gamma = (2.0 / (mu2 + mu_m)) * (b @ P @ S) / denom
    return np.asarray(gamma, dtype=float), P, zeta


def assemble_blocks(closed_loop, K, Ktilde, V, beta, S, gamma):
    """Stack (H, L, B, T) for the networked estimator state eta in R^(n(r+1))."""
    Acl = np.asarray(closed_loop, dtype=float)
    n = Acl.shape[0]
    r = Ktilde.shape[1]
    m = K.shape[1]
    N = n * (r + 1)
    ones = np.ones(n)
    H = np.zeros((N, N))
    H[:n, :n] = Acl
    for bidx in range(r):
        lo = n * (1 + bidx)
        H[:n, lo: lo + n] = np.outer(Ktilde[:, bidx], beta)
        H[lo: lo + n, lo: lo + n] = S
    L = np.zeros((N, m))
    L[:n] = K
    for bidx in range(r):
        lo = n * (1 + bidx)
        L[lo: lo + n] = np.outer(ones, V[bidx])
    B = np.zeros((N, r))
    for bidx in range(r):
        lo = n * (1 + bidx)
        B[lo: lo + n, bidx] = 1.0
    T = np.zeros((r, N))
    for bidx in range(r):
        lo = n * (1 + bidx)
        T[bidx, lo: lo + n] = gamma
    return H, L, B, T


def local_filter_step(xi_hat, y_next: float, beta, S):
    """One local filter update: z = y(k+1) - beta' xi^, xi^' = S xi^ + 1 z."""
    xi_hat = np.asarray(xi_hat, dtype=float)
    z = float(y_next) - float(beta @ xi_hat)
    xi_next = S @ xi_hat + z
    return z, xi_next


def recover_estimate(F, xi_hats) -> np.ndarray:
    """Centralized estimate from local filter states: sum_i F_i xi^_i."""
    F = np.asarray(F, dtype=float)
    xi = np.asarray(xi_hats, dtype=float)
    if F.ndim != 3 or xi.shape != (F.shape[0], F.shape[2]):
        raise DimensionMismatch("need one n-vector per weight matrix")
    return np.einsum("ijk,ik->j", F, xi)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Everything built for one (system, network, gain) triple."""

    K: np.ndarray
    closed_loop: np.ndarray
    lambda_mat: np.ndarray
    beta: np.ndarray
    S: np.ndarray
    F: np.ndarray
    Ktilde: np.ndarray
    V: np.ndarray
    gamma: np.ndarray
    mare_P: np.ndarray
    zeta: float
    H: np.ndarray
    L: np.ndarray
    B: np.ndarray
    T: np.ndarray
    mahler: float
    mu2: float
    mu_m: float
    sync_margins: np.ndarray
    P: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.closed_loop.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[1]

    @property
    def r(self) -> int:
        return self.Ktilde.shape[1]

    @property
    def stacked_dim(self) -> int:
        return self.n * (self.r + 1)

    def to_json_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                out[f.name] = None
            elif isinstance(value, np.ndarray):
                out[f.name] = matrix_to_json(value)
            else:
                out[f.name] = float(value)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_dict(cls, data: dict) -> "Decomposition":
        kwargs = {}
        for f in fields(cls):
            value = data[f.name]
            if value is None:
                kwargs[f.name] = None
            elif isinstance(value, dict):
                kwargs[f.name] = matrix_from_json(value)
            else:
                kwargs[f.name] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Decomposition":
        return cls.from_json_dict(json.loads(text))


def matrix_to_json(arr: np.ndarray) -> dict:
    """Row-major JSON form; 1-D arrays become single-row matrices."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        shape = {"rows": 1, "cols": int(arr.size)}
    elif arr.ndim == 2:
        shape = {"rows": int(arr.shape[0]), "cols": int(arr.shape[1])}
    elif arr.ndim == 3:
        shape = {
            "count": int(arr.shape[0]),
            "rows": int(arr.shape[1]),
            "cols": int(arr.shape[2]),
        }
    else:
        raise DimensionMismatch("only 1-D/2-D/3-D arrays serialize")
    return {**shape, "data": [float(x) for x in arr.ravel()]}


def matrix_from_json(obj: dict) -> np.ndarray:
    data = np.asarray(obj["data"], dtype=float)
    if "count" in obj:
        return data.reshape(obj["count"], obj["rows"], obj["cols"])
    if obj["rows"] == 1 and "cols" in obj:
        return data.reshape(obj["rows"], obj["cols"])
    return data.reshape(obj["rows"], obj["cols"])


def unstable_eigenvalues(A, tol: float = _UNIT_CIRCLE_TOL) -> np.ndarray:
    eig = np.linalg.eigvals(np.asarray(A, dtype=float))
    return eig[np.abs(eig) >= 1 - tol]


def assemble_operator(
    sys: LtiSystem,
    net: SensorNetwork,
    kal: KalmanSolution | None,
    *,
    K,
    closed_loop,
    lambda_mat,
    beta,
    S,
    F,
    Ktilde,
    V,
    gamma,
    mare_P,
    zeta: float,
    mahler: float,
) -> Decomposition:
    """Final assembly plus the per-mode synchronization stability check."""
    H, L, B, T = assemble_blocks(closed_loop, K, Ktilde, V, beta, S, gamma)
    mu = net.spectrum.eigenvalues
    margins = np.array(
        [np.abs(np.linalg.eigvals(H - mu_j * (B @ T))).max() for mu_j in mu[1:]]
    )
    if margins.size and margins.max() >= 1 - 1e-9:
        raise SyncSpectrumUnstable(
            f"synchronization mode has spectral radius {margins.max():.9f}"
        )
    return Decomposition(
        K=np.asarray(K, dtype=float),
        closed_loop=np.asarray(closed_loop, dtype=float),
        lambda_mat=np.asarray(lambda_mat, dtype=float),
        beta=np.asarray(beta, dtype=float),
        S=np.asarray(S, dtype=float),
        F=np.asarray(F, dtype=float),
        Ktilde=np.asarray(Ktilde, dtype=float),
        V=np.asarray(V, dtype=float),
        gamma=np.asarray(gamma, dtype=float),
        mare_P=np.asarray(mare_P, dtype=float),
        zeta=float(zeta),
        H=H,
        L=L,
        B=B,
        T=T,
        mahler=float(mahler),
        mu2=float(mu[1]),
        mu_m=float(mu[-1]),
        sync_margins=margins,
        P=None if kal is None else kal.P,
    )


def build_decomposition(
    sys: LtiSystem,
    net: SensorNetwork,
    gain=None,
    stable_poles=None,
    zeta: float | None = None,
    cluster_tol: float = 1e-7,
) -> Decomposition:
    """Build the full decomposition for a system/network pair.

    With ``gain=None`` the steady-state Kalman gain is computed; otherwise the
    given gain is used (it must stabilize A - KCA), which is how low-rank
    designed gains enter the distributed machinery.
    """
    kal = None
    if gain is None:
        kal = solve_steady_gain(sys, net)
        K, closed = kal.K, kal.closed_loop
    else:
        K = np.asarray(gain, dtype=float)
        if K.shape != (sys.n, net.m):
            raise DimensionMismatch("gain must be n x m")
        closed = sys.A - K @ net.C @ sys.A
        if np.abs(np.linalg.eigvals(closed)).max() >= 1.0:
            raise UnstableClosedLoop("supplied gain does not stabilize the filter")
    lam = build_lambda(closed, cluster_tol)
    beta, S = design_beta_s(lam, unstable_eigenvalues(sys.A), stable_poles)
    F = solve_filter_weights(lam, closed, K)
    Ktilde, V = rank_factorize(K)
    gamma, mare_P, zeta_val = solve_mare_gamma(
        S, np.ones(sys.n), net.spectrum.mu2, net.spectrum.mu_max, zeta
    )
    return assemble_operator(
        sys,
        net,
        kal,
        K=K,
        closed_loop=closed,
        lambda_mat=lam,
        beta=beta,
        S=S,
        F=F,
        Ktilde=Ktilde,
        V=V,
        gamma=gamma,
        mare_P=mare_P,
        zeta=zeta_val,
        mahler=mahler_measure(S),
    )
