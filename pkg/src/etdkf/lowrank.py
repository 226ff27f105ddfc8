"""Low-rank gain design by convex relaxation over sensor-selection spectra.

The communication cost of the networked estimator scales with the rank of the
steady gain.  Given a rank budget rt < m, the designer looks for the best
rt-dimensional linear compression of the whitened measurements:

* relax the choice of compression to a symmetric matrix X on the capped
  simplex {0 <= X <= I, tr X = rt} in sensor space,
* minimize tr(P(X)), the steady posterior covariance of a virtual filter
  whose information matrix is Cbar' X Cbar (Cbar = R^{-1/2} C), by projected
  gradient descent with an analytic gradient,
* round the relaxed optimum by keeping the top rt eigenvectors, giving a
  compression W with W R W' = I, and run an ordinary steady filter on the
  compressed measurements.

The compressed-filter gain, pulled back to full measurement space, has rank
at most rt by construction, and its real steady error covariance equals the
virtual filter's covariance exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegenerateSpectrum,
    DimensionMismatch,
    Divergence,
    InfeasibleRank,
    VirtualNotDetectable,
)
from .kalman import _posterior_step, solve_steady_gain
from .model import LtiSystem, SensorNetwork


def _sym_inv_sqrt(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(R^{1/2}, R^{-1/2}) as symmetric matrices via the eigendecomposition."""
    vals, vecs = np.linalg.eigh(R)
    root = vecs * np.sqrt(vals) @ vecs.T
    inv_root = vecs * (1.0 / np.sqrt(vals)) @ vecs.T
    return root, inv_root


def _steady_posterior(A, Q, C, R, tol: float = 1e-13, max_iter: int = 200_000):
    """Fixed point of the posterior covariance recursion for any (C, R).

    Unlike the main solver this does not insist on observability: rank-starved
    virtual sensors are expected here, and a genuinely undetectable choice
    shows up as a diverging trace instead.
    """
    n = A.shape[0]
    P = np.zeros((n, n))
    for _ in range(max_iter):
        P_next, K = _posterior_step(P, A, Q, C, R)
        gap = np.abs(P_next - P).max()
        P = P_next
        if np.trace(P) > 1e12:
            raise Divergence("virtual filter covariance diverges")
        if gap <= tol * (1.0 + np.abs(P).max()):
            return P, K
    raise Divergence("virtual filter covariance did not settle")


def _virtual_sensor(X: np.ndarray, cbar: np.ndarray) -> np.ndarray:
    """Rows of a unit-noise sensor whose information matrix is cbar' X cbar."""
    vals, vecs = np.linalg.eigh(X)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))).T @ cbar


def relaxation_objective_grad(X, sys: LtiSystem, net: SensorNetwork):
    """Objective tr(P(X)) and its gradient on sensor-selection space.

    P(X) is the steady posterior covariance under the virtual unit-noise
    sensor with information matrix Cbar' X Cbar.  The gradient is
    -Cbar P Psi P Cbar' with Psi the closed-loop observability Gramian
    Psi = G' Psi G + I, G = (I - K_v C_v) A.
    """
    X = 0.5 * (np.asarray(X, dtype=float) + np.asarray(X, dtype=float).T)
    m = net.m
    if X.shape != (m, m):
        raise DimensionMismatch(f"X must be {m}x{m}")
    _, r_inv_root = _sym_inv_sqrt(net.R)
    cbar = r_inv_root @ net.C
    cv = _virtual_sensor(X, cbar)
    P, Kv = _steady_posterior(sys.A, sys.Q, cv, np.eye(m))
    G = (np.eye(sys.n) - Kv @ cv) @ sys.A
    psi = sla.solve_discrete_lyapunov(G.T, np.eye(sys.n))
    grad = -cbar @ P @ psi @ P @ cbar.T
    return float(np.trace(P)), 0.5 * (grad + grad.T)


def project_capped_simplex(vals: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of eigenvalues onto {0 <= v <= 1, sum v = total}.

    Bisection on the shift t in clip(vals - t, 0, 1); the clipped sum is
    continuous and nonincreasing in t.
    """
    vals = np.asarray(vals, dtype=float)
    if not 0 <= total <= vals.size:
        raise InfeasibleRank("target trace outside [0, m]")
    lo = vals.min() - 1.0
    hi = vals.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = np.clip(vals - mid, 0.0, 1.0).sum()
        if s > total:
            lo = mid
        else:
            hi = mid
    return np.clip(vals - 0.5 * (lo + hi), 0.0, 1.0)


def _project_spectrum(X: np.ndarray, total: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (X + X.T))
    proj = project_capped_simplex(vals, total)
    Xp = (vecs * proj) @ vecs.T
    return 0.5 * (Xp + Xp.T)


@dataclass
class RelaxationResult:
    """Relaxed optimum over the capped simplex, with the solver trace."""

    X: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list


def solve_relaxation(
    sys: LtiSystem,
    net: SensorNetwork,
    r_tilde: int,
    *,
    max_iter: int = 5000,
    tol: float = 1e-8,
    patience: int = 20,
    step0: float = 1.0,
) -> RelaxationResult:
    """Projected gradient descent for the relaxed rank-budget problem.

    Starts at the maximally spread feasible point (rt/m) I and stops when the
    best objective has not improved by a relative ``tol`` for ``patience``
    consecutive iterations.
    """
    m = net.m
    r_tilde = int(r_tilde)
    if not 1 <= r_tilde <= m:
        raise InfeasibleRank(f"rank budget must lie in [1, {m}]")
    X = (r_tilde / m) * np.eye(m)
    f, g = relaxation_objective_grad(X, sys, net)
    best_f, best_X = f, X
    history = [f]
    stall = 0
    stationary = False
    it = 0
    for it in range(1, max_iter + 1):
        step = step0
        accepted = False
        for _ in range(40):
            cand = _project_spectrum(X - step * g, float(r_tilde))
            decrease = float(np.sum(g * (X - cand)))
            try:
                f_cand, g_cand = relaxation_objective_grad(cand, sys, net)
            except Divergence:
                # candidate lost detectability; shorten the step and retry
                step *= 0.5
                continue
            if f_cand <= f - 1e-4 * decrease:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            stationary = True
            break
        improved = best_f - f_cand
        X, f, g = cand, f_cand, g_cand
        if f < best_f:
            best_f, best_X = f, X
        history.append(f)
        if improved <= tol * (1.0 + abs(best_f)):
            stall += 1
            if stall >= patience:
                break
        else:
            stall = 0
    return RelaxationResult(
        X=best_X,
        objective=best_f,
        iterations=it,
        converged=stationary or stall >= patience,
        history=history,
    )


def round_and_recover(X, r_tilde: int, net: SensorNetwork):
    """Top-eigenvector rounding of the relaxed optimum.

    Returns ``(W, X0)``: the compression W = Vr' R^{-1/2} (rt x m, whitening
    included, so W R W' = I) and the projector X0 = Vr Vr' it corresponds to.
    Warns DegenerateSpectrum when the spectral gap at the cut is tiny, since
    the kept subspace is then poorly determined.
    """
    X = np.asarray(X, dtype=float)
    m = net.m
    r_tilde = int(r_tilde)
    if not 1 <= r_tilde <= m:
        raise InfeasibleRank(f"rank budget must lie in [1, {m}]")
    if X.shape != (m, m):
        raise DimensionMismatch(f"X must be {m}x{m}")
    vals, vecs = np.linalg.eigh(0.5 * (X + X.T))
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    if r_tilde < m and vals[r_tilde - 1] - vals[r_tilde] < 1e-6:
        warnings.warn(
            "spectral gap at the rank cut is below 1e-6; the kept subspace is ambiguous",
            DegenerateSpectrum,
        )
    Vr = vecs[:, :r_tilde].copy()
    for j in range(r_tilde):
        col = Vr[:, j]
        lead = col[np.abs(col) > 1e-12]
        if lead.size and lead[0] < 0:
            Vr[:, j] = -col
    X0 = Vr @ Vr.T
    r_root, r_inv_root = _sym_inv_sqrt(net.R)
    W = Vr.T @ r_inv_root
    recon = r_root @ W.T @ np.linalg.solve(W @ net.R @ W.T, W @ r_root)
    if np.abs(recon - X0).max() > 1e-8:
        raise Divergence("rounded compression does not reproduce its projector")
    return W, 0.5 * (X0 + X0.T)


def _detectability_margin(A: np.ndarray, C: np.ndarray) -> float:
    """min over |eig| >= 1 of sigma_min([A - eig I; C]), scaled; inf if stable."""
    scale = max(np.abs(A).max(), np.abs(C).max(initial=0.0), 1.0)
    margin = np.inf
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-9:
            continue
        stack = np.vstack([A - lam * np.eye(A.shape[0]), C])
        margin = min(margin, np.linalg.svd(stack, compute_uv=False)[-1] / scale)
    return margin


@dataclass
class LowRankDesign:
    """A rank-budgeted gain together with the relaxation that produced it."""

    r_tilde: int
    W: np.ndarray                 # (rt, m) measurement compression
    gain: np.ndarray              # (n, m) full-space gain, rank <= rt
    virtual_gain: np.ndarray      # (n, rt) gain of the compressed filter
    cov: np.ndarray               # steady error covariance with this gain
    objective: float              # tr(cov)
    relaxed_objective: Optional[float] = None
    X_relaxed: Optional[np.ndarray] = None
    X_rounded: Optional[np.ndarray] = None


def design_gain(sys: LtiSystem, net: SensorNetwork, W) -> LowRankDesign:
    """Steady filter on compressed measurements W y, pulled back to y-space.

    The compressed pair (A, WC) must stay detectable; the returned gain is
    K_virtual W, whose rank is at most the number of rows of W, and whose
    steady observer covariance on the real system equals the compressed
    filter's covariance.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[1] != net.m:
        raise DimensionMismatch("compression must have one column per sensor")
    r_tilde = W.shape[0]
    if not 1 <= r_tilde <= net.m:
        raise InfeasibleRank(f"rank budget must lie in [1, {net.m}]")
    C_virtual = W @ net.C
    R_virtual = W @ net.R @ W.T
    if _detectability_margin(sys.A, C_virtual) < 1e-10:
        raise VirtualNotDetectable("compressed sensor loses an unstable mode")
    P, K_virtual = _steady_posterior(sys.A, sys.Q, C_virtual, R_virtual)
    gain = K_virtual @ W
    return LowRankDesign(
        r_tilde=r_tilde,
        W=W,
        gain=gain,
        virtual_gain=K_virtual,
        cov=P,
        objective=float(np.trace(P)),
    )


def _orthogonal_extension(prev_V: np.ndarray, X: np.ndarray) -> Optional[np.ndarray]:
    """Extend a kept subspace by the strongest new direction of X."""
    m = prev_V.shape[0]
    proj = np.eye(m) - prev_V @ prev_V.T
    resid = proj @ X @ proj
    vals, vecs = np.linalg.eigh(0.5 * (resid + resid.T))
    top = vecs[:, -1]
    top = proj @ top
    norm = np.linalg.norm(top)
    if norm < 1e-10:
        base = sla.null_space(prev_V.T)
        if base.shape[1] == 0:
            return None
        top = base[:, 0]
        norm = 1.0
    return np.hstack([prev_V, (top / norm).reshape(-1, 1)])


def performance_table(
    sys: LtiSystem,
    net: SensorNetwork,
    ranks: Optional[Sequence[int]] = None,
    *,
    max_iter: int = 5000,
    tol: float = 1e-8,
) -> list[dict]:
    """Relax, round and redesign for each rank budget; one row per budget.

    Each row holds the budget, the relaxed lower bound, the achieved objective
    and the objective normalized by the unconstrained filter.  Achieved values
    are non-increasing in the budget: alongside the rounded subspace the
    search also tries the previous best subspace extended by one direction,
    and keeping a superset of compressed measurements can never hurt the
    optimal steady covariance.
    """
    full = solve_steady_gain(sys, net)
    j_full = float(np.trace(full.P))
    budgets = list(range(1, net.m + 1)) if ranks is None else [int(b) for b in ranks]
    rows: list[dict] = []
    prev_V: Optional[np.ndarray] = None
    r_root, r_inv_root = _sym_inv_sqrt(net.R)
    for budget in budgets:
        relax = solve_relaxation(sys, net, budget, max_iter=max_iter, tol=tol)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrum)
            W, X0 = round_and_recover(relax.X, budget, net)
        candidates = [(W, X0)]
        if prev_V is not None and prev_V.shape[1] == budget - 1:
            ext = _orthogonal_extension(prev_V, relax.X)
            if ext is not None:
                candidates.append((ext.T @ r_inv_root, ext @ ext.T))
        best = None
        failure: Optional[Exception] = None
        for Wc, X0c in candidates:
            try:
                design = design_gain(sys, net, Wc)
            except (VirtualNotDetectable, Divergence) as exc:
                failure = exc
                continue
            design.relaxed_objective = relax.objective
            design.X_relaxed = relax.X
            design.X_rounded = X0c
            if best is None or design.objective < best.objective:
                best = design
        if best is None:
            raise failure
        rows.append(
            {
                "rank": budget,
                "relaxed_objective": relax.objective,
                "objective": best.objective,
                "normalized_objective": best.objective / j_full,
                "design": best,
            }
        )
        # rows of W are V' R^{-1/2}, so V = (W R^{1/2})'
        prev_V, _ = np.linalg.qr((best.W @ r_root).T)
    return rows
