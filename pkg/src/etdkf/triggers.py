"""Event-triggering strategies.

A node broadcasts when the squared norm of its broadcast gap reaches a
threshold h.  Three threshold families are provided (plus full transmission):

* static_time:   h(k) = c0 + c1 * alpha^k
* static_state:  h(k) = c * rate^k * q_hat        (q_hat = clipped local
                 disagreement of stored neighbor broadcasts)
* dynamic:       h(k) = chi/theta_i + c * rate^k * q_hat with the internal
                 state chi(k+1) = beta_i * chi(k) + c * rate^k * q_hat - |eps|^2

Ties fire: the decision is eps_sq - h >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTrigger

VARIANTS = ("full", "static_time", "static_state", "dynamic")


@dataclass(frozen=True)
class TriggerSpec:
    """Threshold family and its parameters (validated at construction)."""

    variant: str
    c0: float = 0.0
    c1: float = 0.0
    alpha: float = 0.8
    ell: float = 10.0
    c: float = 1.0
    rate: float = 0.9
    beta_i: float = 0.6
    theta_i: float = 2.0
    chi0: float = 1.0

    def __post_init__(self):
        v = self.variant
        if v not in VARIANTS:
            raise InvalidTrigger(f"unknown trigger variant {v!r}")
        if v == "static_time":
            if not (self.c0 > 0 and self.c1 >= 0 and 0 < self.alpha < 1):
                raise InvalidTrigger("static_time needs c0 > 0, c1 >= 0, alpha in (0,1)")
        if v in ("static_state", "dynamic"):
            if not (self.ell > 0 and self.c > 0 and 0 < self.rate < 1):
                raise InvalidTrigger("state trigger needs ell > 0, c > 0, rate in (0,1)")
        if v == "dynamic":
            if not (self.chi0 > 0 and 0 < self.beta_i < 1):
                raise InvalidTrigger("dynamic trigger needs chi0 > 0, beta_i in (0,1)")
            if not self.theta_i > 1.0 / self.beta_i:
                raise InvalidTrigger("dynamic trigger needs theta_i > 1/beta_i")

    @classmethod
    def full(cls) -> "TriggerSpec":
        return cls(variant="full")

    @classmethod
    def static_time(cls, c0: float = 5.0, c1: float = 5.0, alpha: float = 0.8):
        return cls(variant="static_time", c0=c0, c1=c1, alpha=alpha)

    @classmethod
    def static_state(cls, ell: float = 10.0, c: float = 1.0, rate: float = 0.9):
        return cls(variant="static_state", ell=ell, c=c, rate=rate)

    @classmethod
    def dynamic(
        cls,
        beta_i: float = 0.6,
        theta_i: float = 2.0,
        chi0: float = 1.0,
        ell: float = 10.0,
        c: float = 1.0,
        rate: float = 0.9,
    ):
        return cls(
            variant="dynamic",
            beta_i=beta_i,
            theta_i=theta_i,
            chi0=chi0,
            ell=ell,
            c=c,
            rate=rate,
        )

    def initial_state(self) -> "TriggerState":
        chi = self.chi0 if self.variant == "dynamic" else 0.0
        return TriggerState(chi=chi, last_threshold=math.inf)


@dataclass(frozen=True)
class TriggerState:
    """Per-node trigger memory (chi is used by the dynamic variant only)."""

    chi: float
    last_threshold: float


def threshold(
    spec: TriggerSpec,
    state: TriggerState,
    k: int,
    q_hat: float = 0.0,
    eps_norm_sq: float = 0.0,
) -> tuple[float, TriggerState]:
    """Threshold h at step k and the successor trigger state.

    ``q_hat`` is the caller-computed neighborhood disagreement (already
    clipped at ell); ``eps_norm_sq`` is the current (pre-decision) broadcast
    gap.  The dynamic variant's chi recursion uses the post-decision gap,
    which is zero when the gap reaches h (the broadcast resets it), so the
    reset rule of ``decide`` is applied internally before updating chi.
    """
    if k < 0:
        raise InvalidTrigger("step index must be nonnegative")
    if q_hat < 0:
        raise InvalidTrigger("q_hat must be nonnegative")
    if spec.variant == "full":
        return -1.0, TriggerState(chi=state.chi, last_threshold=-1.0)
    if spec.variant == "static_time":
        h = spec.c0 + spec.c1 * spec.alpha**k
        return h, TriggerState(chi=state.chi, last_threshold=h)
    a_k = spec.c * spec.rate**k
    if spec.variant == "static_state":
        h = a_k * q_hat
        return h, TriggerState(chi=state.chi, last_threshold=h)
    h = state.chi / spec.theta_i + a_k * q_hat
    surviving = 0.0 if decide(eps_norm_sq, h) else eps_norm_sq
    chi_next = spec.beta_i * state.chi + a_k * q_hat - surviving
    return h, TriggerState(chi=chi_next, last_threshold=h)


def decide(eps_norm_sq: float, h: float) -> bool:
    """Fire iff eps_norm_sq - h >= 0 (boundary fires)."""
    return eps_norm_sq - h >= 0.0


def compute_qhat(deltas, adjacency, i: int, ell: float) -> float:
    """Neighborhood disagreement min(0.5 sum_j a_ij |d_j - d_i|^2, ell).

    ``deltas`` holds one stored broadcast r-vector per node, row-aligned with
    the adjacency matrix.
    """
    deltas = np.asarray(deltas, dtype=float)
    w = np.asarray(adjacency, dtype=float)[i]
    diff = deltas - deltas[i]
    total = 0.5 * float(w @ np.einsum("jk,jk->j", diff, diff))
    return min(total, ell)
