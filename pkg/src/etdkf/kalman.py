"""Centralized estimation baselines.

Steady-state Kalman gain via the filtering Riccati fixed point, a reference
filter runner, and the steady error covariance of an arbitrary-gain
Luenberger observer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NoConvergence, NotObservable, UnstableClosedLoop
from .model import LtiSystem, SensorNetwork, observability_margin

_RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class KalmanSolution:
    """Steady-state filter: posterior covariance P, gain K, A - KCA, rank(K)."""

    P: np.ndarray
    K: np.ndarray
    closed_loop: np.ndarray
    rank: int


def _posterior_step(P, A, Q, C, R):
    """One covariance update M = APA' + Q, P+ = (I - KC) M in Joseph form."""
    M = A @ P @ A.T + Q
    G = C @ M @ C.T + R
    K = np.linalg.solve(G, C @ M).T
    IKC = np.eye(A.shape[0]) - K @ C
    P_next = IKC @ M @ IKC.T + K @ R @ K.T
    return 0.5 * (P_next + P_next.T), K


def solve_steady_gain(
    sys: LtiSystem,
    net: SensorNetwork,
    tol: float = 1e-13,
    max_iter: int = 200_000,
) -> KalmanSolution:
    """Iterate the filtering Riccati recursion to its fixed point.

    Requires (A, C) observable (PBH margin above 1e-10).  Raises
    NoConvergence if the iteration cap is hit before the covariance settles.
    """
    A, Q, C, R = sys.A, sys.Q, net.C, net.R
    if observability_margin(A, C) < 1e-10:
        raise NotObservable("(A, C) is not observable")
    P = np.zeros_like(A)
    for _ in range(max_iter):
        P_next, _ = _posterior_step(P, A, Q, C, R)
        delta = np.abs(P_next - P).max()
        P = P_next
        if delta <= tol * (1.0 + np.abs(P).max()):
            break
    else:
        raise NoConvergence("Riccati recursion did not settle within the cap")
    _, K = _posterior_step(P, A, Q, C, R)
    closed_loop = A - K @ C @ A
    sv = np.linalg.svd(K, compute_uv=False)
    rank = int(np.count_nonzero(sv > _RANK_TOL * max(sv[0], 1e-300)))
    return KalmanSolution(P=P, K=K, closed_loop=closed_loop, rank=rank)


def run_centralized(sol: KalmanSolution, measurements, x0=None) -> np.ndarray:
    """Run x^(k+1) = (A - KCA) x^(k) + K y(k+1) over a measurement sequence.

    ``measurements[k]`` is y(k+1), the sample consumed by step k.  Returns the
    estimates x^(1..T) stacked in rows.
    """
    Y = np.atleast_2d(np.asarray(measurements, dtype=float))
    n = sol.K.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    out = np.empty((Y.shape[0], n))
    for k in range(Y.shape[0]):
        x = sol.closed_loop @ x + sol.K @ Y[k]
        out[k] = x
    return out


def luenberger_error_cov(sys: LtiSystem, net: SensorNetwork, K_any) -> np.ndarray:
    """Steady error covariance of the observer with an arbitrary gain.

    Solves P = (A-KCA) P (A-KCA)' + (I-KC) Q (I-KC)' + K R K'.  The gain must
    make A - KCA strictly stable.
    """
    K = np.asarray(K_any, dtype=float)
    A, Q, C, R = sys.A, sys.Q, net.C, net.R
    closed = A - K @ C @ A
    if np.abs(np.linalg.eigvals(closed)).max() >= 1 - 1e-9:
        raise UnstableClosedLoop("gain does not stabilize A - KCA")
    IKC = np.eye(A.shape[0]) - K @ C
    W = IKC @ Q @ IKC.T + K @ R @ K.T
    P = sla.solve_discrete_lyapunov(closed, 0.5 * (W + W.T))
    return 0.5 * (P + P.T)
