"""Plant, sensor network, and graph primitives.

The plant is a discrete-time LTI system x(k+1) = A x(k) + w(k) observed by m
sensors y_i(k) = C_i x(k) + v_i(k) that communicate over a weighted undirected
graph.  This module also provides the similarity transform that separates the
plant into unstable and stable blocks, and the heat-diffusion benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    DisconnectedSensorGraph,
    ModelError,
    NegativeWeight,
    NotObservable,
    NotPositiveDefinite,
    NotSymmetric,
)

_PSD_TOL = 1e-10
_CONNECT_TOL = 1e-9


def _square(mat, name: str) -> np.ndarray:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def _check_symmetric(mat: np.ndarray, name: str) -> np.ndarray:
    scale = 1.0 + np.abs(mat).max(initial=0.0)
    if np.abs(mat - mat.T).max(initial=0.0) > 1e-9 * scale:
        raise NotSymmetric(f"{name} is not symmetric")
    return 0.5 * (mat + mat.T)


def _check_psd(mat: np.ndarray, name: str) -> None:
    if mat.size and np.linalg.eigvalsh(mat).min() < -_PSD_TOL:
        raise NotPositiveDefinite(f"{name} is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Discrete-time plant x(k+1) = A x(k) + w(k), w ~ N(0, Q).

    ``n_unstable`` may be set when A is already in block form, unstable block
    (eigenvalue moduli >= 1) in the top-left corner and zero coupling blocks.
    """

    A: np.ndarray
    Q: np.ndarray
    x0_cov: np.ndarray | None = None
    n_unstable: int | None = None

    def __post_init__(self):
        A = _square(self.A, "A")
        Q = _check_symmetric(_square(self.Q, "Q"), "Q")
        if Q.shape != A.shape:
            raise DimensionMismatch("Q shape does not match A")
        _check_psd(Q, "Q")
        x0 = self.x0_cov
        if x0 is None:
            x0 = np.eye(A.shape[0])
        x0 = _check_symmetric(_square(x0, "x0_cov"), "x0_cov")
        if x0.shape != A.shape:
            raise DimensionMismatch("x0_cov shape does not match A")
        _check_psd(x0, "x0_cov")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "x0_cov", x0)
        if self.n_unstable is not None:
            nu = int(self.n_unstable)
            if not 0 <= nu <= A.shape[0]:
                raise DimensionMismatch("n_unstable out of range")
            _check_block_form(A, nu)
            object.__setattr__(self, "n_unstable", nu)

    @property
    def n(self) -> int:
        return self.A.shape[0]


def _check_block_form(A: np.ndarray, nu: int, tol: float = 1e-8) -> None:
    n = A.shape[0]
    if nu in (0, n):
        off = 0.0
    else:
        off = max(np.abs(A[:nu, nu:]).max(initial=0.0),
                  np.abs(A[nu:, :nu]).max(initial=0.0))
    if off > 1e-12:
        raise ModelError("A is not block-diagonal at the declared split")
    if nu and np.abs(np.linalg.eigvals(A[:nu, :nu])).min() < 1 - tol:
        raise ModelError("declared unstable block has a stable eigenvalue")
    if nu < n and np.abs(np.linalg.eigvals(A[nu:, nu:])).max() >= 1 - tol:
        raise ModelError("declared stable block has an unstable eigenvalue")


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    """Graph Laplacian together with its ascending eigenvalues."""

    laplacian: np.ndarray
    eigenvalues: np.ndarray
    connected: bool

    @property
    def mu2(self) -> float:
        """Algebraic connectivity (second-smallest eigenvalue)."""
        return float(self.eigenvalues[1])

    @property
    def mu_max(self) -> float:
        return float(self.eigenvalues[-1])


def build_laplacian(adjacency) -> LaplacianSpectrum:
    """Build L = D - W and its spectrum from a weighted adjacency matrix.

    The adjacency must be symmetric with nonnegative weights and a zero
    diagonal.  Disconnectedness is reported through the ``connected`` flag,
    not as an error.
    """
    W = _square(adjacency, "adjacency")
    if W.size and np.abs(W - W.T).max(initial=0.0) > 1e-12:
        raise NotSymmetric("adjacency is not symmetric")
    W = 0.5 * (W + W.T)
    if W.size and W.min(initial=0.0) < 0:
        raise NegativeWeight("adjacency has a negative weight")
    if W.size and np.abs(np.diag(W)).max(initial=0.0) > 0:
        raise NegativeWeight("adjacency has nonzero diagonal entries")
    lap = np.diag(W.sum(axis=1)) - W
    eig = np.linalg.eigvalsh(lap) if W.size else np.zeros(0)
    connected = bool(W.shape[0] <= 1 or eig[1] > _CONNECT_TOL)
    return LaplacianSpectrum(laplacian=lap, eigenvalues=eig, connected=connected)


@dataclass(frozen=True, eq=False)
class SensorNetwork:
    """m sensors y_i = C_i x + v_i on a connected weighted undirected graph."""

    C: np.ndarray
    R: np.ndarray
    adjacency: np.ndarray
    spectrum: LaplacianSpectrum = field(init=False)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if C.ndim != 2:
            raise DimensionMismatch("C must be a 2-D matrix of stacked rows")
        m = C.shape[0]
        R = _check_symmetric(_square(self.R, "R"), "R")
        if R.shape[0] != m:
            raise DimensionMismatch("R size does not match the number of sensors")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise NotPositiveDefinite("R must be positive definite")
        W = _square(self.adjacency, "adjacency")
        if W.shape[0] != m:
            raise DimensionMismatch("adjacency size does not match C")
        spectrum = build_laplacian(W)
        if not spectrum.connected:
            raise DisconnectedSensorGraph("sensor graph is not connected")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "adjacency", 0.5 * (W + W.T))
        object.__setattr__(self, "spectrum", spectrum)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[1]


def observability_margin(A: np.ndarray, C: np.ndarray) -> float:
    """Smallest over eigenvalues of A of sigma_min([A - lambda I; C]), scaled.

    A PBH-style margin: strictly positive iff (A, C) is observable.
    """
    n = A.shape[0]
    scale = max(1.0, np.abs(A).max(initial=0.0), np.abs(C).max(initial=0.0))
    worst = np.inf
    for lam in np.linalg.eigvals(A):
        pencil = np.vstack([A - lam * np.eye(n), C])
        worst = min(worst, np.linalg.svd(pencil, compute_uv=False)[-1])
    return float(worst / scale)


def spectral_split(A, tol: float = 1e-8):
    """Split A into unstable and stable diagonal blocks.

    Returns ``(similarity, block_a, n_unstable)`` with
    ``similarity @ A @ inv(similarity) = block_a``, where ``block_a`` is block
    diagonal, the top-left block carrying every eigenvalue with modulus
    >= 1 - tol.  If A is already in that form the similarity is the identity.
    """
    A = _square(A, "A")
    n = A.shape[0]
    moduli = np.abs(np.linalg.eigvals(A))
    nu = int(np.count_nonzero(moduli >= 1 - tol))
    eye = np.eye(n)
    try:
        _check_block_form(A, nu, tol)
        return eye, A.copy(), nu
    except ModelError:
        pass

    T, Zs, sdim = sla.schur(
        A, output="real", sort=lambda re, im: np.hypot(re, im) >= 1 - tol
    )
    nu = int(sdim)
    block = np.zeros_like(A)
    block[:nu, :nu] = T[:nu, :nu]
    block[nu:, nu:] = T[nu:, nu:]
    if 0 < nu < n:
        try:
            X = sla.solve_sylvester(T[:nu, :nu], -T[nu:, nu:], -T[:nu, nu:])
        except np.linalg.LinAlgError as exc:
            raise ModelError("defective splitting: blocks share an eigenvalue") from exc
        M_inv = eye.copy()
        M_inv[:nu, nu:] = -X
        similarity = M_inv @ Zs.T
    else:
        similarity = Zs.T.copy()
    return similarity, block, nu


def _grid_laplacian(side: int) -> np.ndarray:
    n = side * side
    W = np.zeros((n, n))
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                W[i, i + 1] = W[i + 1, i] = 1.0
            if r + 1 < side:
                W[i, i + side] = W[i + side, i] = 1.0
    return np.diag(W.sum(axis=1)) - W


def default_heat_sensors(grid_side: int) -> list[int]:
    """Sensor cells on every other grid row (15 cells on the 5x5 grid)."""
    return [r * grid_side + c for r in range(0, grid_side, 2) for c in range(grid_side)]


def heat_grid_system(
    grid_side: int = 5,
    lam: float = 0.1,
    sensor_cells: list[int] | None = None,
    link_radius: int = 2,
) -> tuple[LtiSystem, SensorNetwork]:
    """Heat-diffusion benchmark on a grid_side x grid_side plate.

    A = I - lam * L_grid with the unweighted 4-neighbor grid Laplacian, so A
    is symmetric with one eigenvalue exactly 1 (the constant mode) and the
    rest in (0, 1) for lam < 1/8.  Each sensor measures one cell; two sensors
    communicate when their cells are within Chebyshev distance ``link_radius``.
    Q = R = I.
    """
    if grid_side < 1:
        raise DimensionMismatch("grid_side must be at least 1")
    if not 0.0 < lam < 0.125:
        raise ModelError("diffusion coefficient must lie in (0, 1/8)")
    n = grid_side * grid_side
    if sensor_cells is None:
        sensor_cells = default_heat_sensors(grid_side)
    cells = list(sensor_cells)
    if len(set(cells)) != len(cells) or not cells:
        raise DimensionMismatch("sensor cells must be distinct and nonempty")
    if min(cells) < 0 or max(cells) >= n:
        raise DimensionMismatch("sensor cell index out of range")

    A = np.eye(n) - lam * _grid_laplacian(grid_side)
    C = np.zeros((len(cells), n))
    for i, cell in enumerate(cells):
        C[i, cell] = 1.0
    coords = [(cell // grid_side, cell % grid_side) for cell in cells]
    m = len(cells)
    adjacency = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            cheb = max(abs(coords[i][0] - coords[j][0]), abs(coords[i][1] - coords[j][1]))
            if cheb <= link_radius:
                adjacency[i, j] = adjacency[j, i] = 1.0
    if m > 1 and not build_laplacian(adjacency).connected:
        raise DisconnectedSensorGraph(
            "sensor cells do not form a connected graph; increase link_radius"
        )
    sys = LtiSystem(A=A, Q=np.eye(n), x0_cov=np.eye(n))
    net = SensorNetwork(C=C, R=np.eye(m), adjacency=adjacency)
    if observability_margin(A, C) < 1e-10:
        raise NotObservable("heat benchmark sensor placement is not observable")
    return sys, net
