"""LPV model core in linear fractional representation.

A model is the interconnection of a constant nine-block matrix with a
diagonal parameter block Delta(p) = blkdiag(p_i * I_eta_i).  The rational
scheduling dependency is made well-posed by construction: the feedthrough
coupling block is generated as expm(-N) with N positive-definite by
parameterization, which keeps its spectral radius strictly below one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatch,
    SingularCenter,
    SingularMatrix,
    SingularPoint,
    SingularStep,
)

__all__ = [
    "DeltaStructure",
    "LfrPlant",
    "WellPosedFactors",
    "SchedulingBox",
    "AffineSsModel",
    "Trajectory",
    "WellPosednessReport",
    "delta_of_p",
    "build_N",
    "build_Dzw",
    "is_well_posed",
    "simulate",
    "eliminate_to_ss",
    "affine_ss_to_lfr",
    "normalize_scheduling",
]


def _check_finite(name: str, A: np.ndarray) -> None:
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class DeltaStructure:
    """Repetition structure of the diagonal parameter block.

    eta[i] counts how many times scheduling variable i is repeated on the
    diagonal; the block dimension is n_w = sum(eta).
    """

    eta: tuple[int, ...]

    def __post_init__(self):
        eta = tuple(int(e) for e in self.eta)
        if any(e < 1 for e in eta):
            raise ValueError(f"every repetition count must be >= 1, got {eta}")
        object.__setattr__(self, "eta", eta)

    @property
    def n_p(self) -> int:
        return len(self.eta)

    @property
    def n_w(self) -> int:
        return sum(self.eta)

    def block_map(self) -> np.ndarray:
        """Latent index -> scheduling-variable index, length n_w."""
        return np.repeat(np.arange(self.n_p, dtype=np.int64),
                         np.asarray(self.eta, dtype=np.int64))


def delta_of_p(delta: DeltaStructure, p) -> np.ndarray:
    """Assemble Delta(p) = blkdiag(p_1 I_eta_1, ..., p_np I_eta_np)."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (delta.n_p,):
        raise DimensionMismatch(
            f"expected p of length {delta.n_p}, got shape {p.shape}"
        )
    return np.diag(p[delta.block_map()]) if delta.n_w else np.zeros((0, 0))


def delta_diag(delta: DeltaStructure, p) -> np.ndarray:
    """Diagonal of Delta(p) as a length-n_w vector."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (delta.n_p,):
        raise DimensionMismatch(
            f"expected p of length {delta.n_p}, got shape {p.shape}"
        )
    return p[delta.block_map()]


@dataclass(frozen=True)
class LfrPlant:
    """The nine constant blocks of the interconnection plus the Delta structure.

    State update:   x+ = A_x x + B_w w + B_u u
    Latent output:  z  = C_z x + D_zw w + D_zu u
    Output:         y  = C_y x + D_yw w + D_yu u
    closed by w = Delta(p) z.
    """

    A_x: np.ndarray
    B_w: np.ndarray
    B_u: np.ndarray
    C_z: np.ndarray
    D_zw: np.ndarray
    D_zu: np.ndarray
    C_y: np.ndarray
    D_yw: np.ndarray
    D_yu: np.ndarray
    delta: DeltaStructure

    def __post_init__(self):
        for name in ("A_x", "B_w", "B_u", "C_z", "D_zw", "D_zu",
                     "C_y", "D_yw", "D_yu"):
            A = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            _check_finite(name, A)
            object.__setattr__(self, name, A)
        n_x, n_w, n_u, n_y = self.n_x, self.delta.n_w, self.n_u, self.n_y
        expected = {
            "A_x": (n_x, n_x), "B_w": (n_x, n_w), "B_u": (n_x, n_u),
            "C_z": (n_w, n_x), "D_zw": (n_w, n_w), "D_zu": (n_w, n_u),
            "C_y": (n_y, n_x), "D_yw": (n_y, n_w), "D_yu": (n_y, n_u),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionMismatch(f"{name} has shape {got}, expected {shape}")

    @property
    def n_x(self) -> int:
        return self.A_x.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_u.shape[1]

    @property
    def n_y(self) -> int:
        return self.C_y.shape[0]

    @property
    def n_w(self) -> int:
        return self.delta.n_w

    @property
    def n_p(self) -> int:
        return self.delta.n_p


@dataclass(frozen=True)
class WellPosedFactors:
    """Free variables generating the feedthrough coupling block.

    dA_lower holds the lower triangle (incl. diagonal) of D_A, dB_upper the
    strictly-upper triangle of D_B, d_d the log-diagonal of the positive
    scaling Psi = diag(exp(d_d)).  epsilon is a fixed constant, not trained.
    The free-parameter count is n_w*(n_w+1)/2 + n_w*(n_w-1)/2 + n_w
    = n_w^2 + n_w.
    """

    n_w: int
    dA_lower: np.ndarray
    dB_upper: np.ndarray
    d_d: np.ndarray
    epsilon: float = 1e-3

    def __post_init__(self):
        n = int(self.n_w)
        object.__setattr__(self, "n_w", n)
        for name, size in (("dA_lower", n * (n + 1) // 2),
                           ("dB_upper", n * (n - 1) // 2),
                           ("d_d", n)):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if v.shape != (size,):
                raise DimensionMismatch(
                    f"{name} must have length {size}, got shape {v.shape}"
                )
            _check_finite(name, v)
            object.__setattr__(self, name, v)
        if not (0.0 < self.epsilon <= 0.1):
            raise ValueError(f"epsilon must lie in (0, 0.1], got {self.epsilon}")

    @property
    def n_params(self) -> int:
        return self.n_w * self.n_w + self.n_w

    def D_A(self) -> np.ndarray:
        D = np.zeros((self.n_w, self.n_w))
        D[np.tril_indices(self.n_w)] = self.dA_lower
        return D

    def D_B(self) -> np.ndarray:
        D = np.zeros((self.n_w, self.n_w))
        D[np.triu_indices(self.n_w, k=1)] = self.dB_upper
        return D


def build_N(f: WellPosedFactors) -> np.ndarray:
    """N = Psi (D_A^T D_A + D_B - D_B^T + eps I) with Psi = diag(exp(d_d)).

    The symmetric part of Psi^{-1} N is D_A^T D_A + eps I >= eps I, so every
    eigenvalue of N has strictly positive real part.
    """
    DA = f.D_A()
    DB = f.D_B()
    K = DA.T @ DA + DB - DB.T + f.epsilon * np.eye(f.n_w)
    return np.exp(f.d_d)[:, None] * K


def build_Dzw(f: WellPosedFactors) -> np.ndarray:
    """Feedthrough coupling block expm(-N); its spectral radius is < 1 by
    construction since expm maps the eigenvalues of -N (all with negative
    real part) inside the unit circle."""
    return linalg.expm(-build_N(f))


@dataclass(frozen=True)
class SchedulingBox:
    """Axis-aligned box of admissible scheduling values."""

    p_min: np.ndarray
    p_max: np.ndarray

    def __post_init__(self):
        lo = np.ascontiguousarray(self.p_min, dtype=np.float64)
        hi = np.ascontiguousarray(self.p_max, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("p_min and p_max must be 1-D and equal length")
        if not np.all(lo < hi):
            raise ValueError("p_min must be strictly below p_max componentwise")
        object.__setattr__(self, "p_min", lo)
        object.__setattr__(self, "p_max", hi)

    @property
    def n_p(self) -> int:
        return self.p_min.shape[0]

    @classmethod
    def unit(cls, n_p: int) -> "SchedulingBox":
        return cls(-np.ones(n_p), np.ones(n_p))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.p_min + self.p_max)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.p_max - self.p_min)


@dataclass(frozen=True)
class WellPosednessReport:
    certified_small_gain: bool
    sigma_max: float
    rho: float
    rho_below_one: bool
    min_abs_det: float
    empirical_ok: bool
    counterexample: np.ndarray | None
    samples_checked: int

    @property
    def well_posed(self) -> bool:
        return self.empirical_ok


def _box_grid(box: SchedulingBox, grid_per_dim: int,
              max_points: int = 200_000, seed: int = 0) -> np.ndarray:
    """Product grid over the box, capped at max_points (random subset of the
    full grid, plus all vertices, when the product would exceed the cap)."""
    n_p = box.n_p
    axes = [np.linspace(box.p_min[i], box.p_max[i], grid_per_dim)
            for i in range(n_p)]
    total = grid_per_dim ** n_p
    if total <= max_points:
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, grid_per_dim, size=(max_points, n_p))
    pts = np.stack([axes[i][idx[:, i]] for i in range(n_p)], axis=1)
    verts = np.stack(np.meshgrid(*[(box.p_min[i], box.p_max[i])
                                   for i in range(n_p)], indexing="ij"),
                     axis=-1).reshape(-1, n_p)
    return np.vstack([verts, pts])


def det_on_points(D_zw: np.ndarray, delta: DeltaStructure,
                  points: np.ndarray) -> np.ndarray:
    """det(I - D_zw Delta(p)) for a batch of scheduling points (rows)."""
    bmap = delta.block_map()
    n_w = delta.n_w
    diag = points[:, bmap]  # (m, n_w)
    M = np.eye(n_w)[None, :, :] - D_zw[None, :, :] * diag[:, None, :]
    return np.linalg.det(M)


def min_det_on_unit_box(D_zw: np.ndarray, delta: DeltaStructure,
                        grid_per_dim: int = 21) -> float:
    """Minimum of det(I - D_zw Delta(p)) over the grid on [-1,1]^n_p.

    Coordinates with eta_i = 1 enter the determinant affinely, so their
    extremes are attained at the endpoints; only {-1, +1} are enumerated for
    them, which makes the reduced grid exact for those directions and keeps
    the point count small even for large n_p.
    """
    axes = []
    for e in delta.eta:
        if e == 1:
            axes.append(np.array([-1.0, 1.0]))
        else:
            axes.append(np.linspace(-1.0, 1.0, grid_per_dim))
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    pts = (np.stack([m.ravel() for m in mesh], axis=1)
           if axes else np.zeros((1, 0)))
    return float(np.min(det_on_points(D_zw, delta, pts)))


def is_well_posed(plant: LfrPlant, box: SchedulingBox | None = None,
                  grid_per_dim: int = 21, random_samples: int = 1000,
                  seed: int = 0) -> WellPosednessReport:
    """Check well-posedness of the interconnection on a scheduling box.

    Reports a sufficient small-gain certificate (sigma_max(D_zw) < 1, valid
    for any contraction Delta), the spectral-radius condition rho(D_zw) < 1,
    and an empirical minimum of |det(I - D_zw Delta(p))| over grid and
    random samples with sign-change detection.  An empirical failure carries
    a counterexample point.
    """
    if box is None:
        box = SchedulingBox.unit(plant.n_p)
    if box.n_p != plant.n_p:
        raise DimensionMismatch("box dimension does not match the plant")
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be >= 2")
    D_zw = plant.D_zw
    if plant.n_w == 0:
        return WellPosednessReport(True, 0.0, 0.0, True, 1.0, True, None, 1)
    sigma = float(np.sqrt(linalg.spectral_radius(D_zw.T @ D_zw)))
    rho = float(linalg.spectral_radius(D_zw))
    pts = _box_grid(box, grid_per_dim, seed=seed)
    if random_samples > 0:
        rng = np.random.default_rng(seed + 1)
        rnd = box.p_min + (box.p_max - box.p_min) * rng.random(
            (random_samples, box.n_p))
        pts = np.vstack([pts, rnd])
    dets = det_on_points(D_zw, plant.delta, pts)
    i_min = int(np.argmin(np.abs(dets)))
    min_abs = float(np.abs(dets[i_min]))
    sign_change = bool(np.min(dets) < 0.0 < np.max(dets))
    ok = (min_abs > 1e-12) and not sign_change
    counter = None
    if not ok:
        i_bad = i_min if min_abs <= 1e-12 else int(np.argmin(dets))
        counter = pts[i_bad].copy()
    return WellPosednessReport(
        certified_small_gain=sigma < 1.0,
        sigma_max=sigma,
        rho=rho,
        rho_below_one=rho < 1.0,
        min_abs_det=min_abs,
        empirical_ok=ok,
        counterexample=counter,
        samples_checked=pts.shape[0],
    )


@dataclass(frozen=True)
class Trajectory:
    """Signals produced by a rollout: states x (N+1 rows), scheduling p,
    latent z and w, and outputs y (N rows each)."""

    x: np.ndarray
    p: np.ndarray
    z: np.ndarray
    w: np.ndarray
    y: np.ndarray


def simulate(plant: LfrPlant, sched, u, d=None, x0=None) -> Trajectory:
    """Roll the interconnection forward over an input record.

    `sched` is either a scheduling map with a .forward(x, u, d) method
    (self-scheduled mode) or an (N, n_p) array of exogenous scheduling
    values.  Each step solves the latent equation
    z = (I - D_zw Delta(p))^{-1} (C_z x + D_zu u); a singular solve raises
    SingularStep with the offending step index.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if u.shape[1] != plant.n_u:
        raise DimensionMismatch(f"u must have {plant.n_u} columns")
    N = u.shape[0]
    d = (np.zeros((N, 0)) if d is None
         else np.atleast_2d(np.asarray(d, dtype=np.float64)))
    if d.shape[0] != N:
        raise DimensionMismatch("d length does not match u")
    x0 = np.zeros(plant.n_x) if x0 is None else np.asarray(x0, dtype=np.float64)

    if sched is None and plant.n_p == 0:
        sched = np.zeros((N, 0))
    exogenous = not hasattr(sched, "forward")
    if exogenous:
        p_ext = np.atleast_2d(np.asarray(sched, dtype=np.float64))
        if p_ext.shape != (N, plant.n_p):
            raise DimensionMismatch(
                f"exogenous p must have shape {(N, plant.n_p)}, got {p_ext.shape}"
            )

    n_w, n_p = plant.n_w, plant.n_p
    bmap = plant.delta.block_map()
    X = np.zeros((N + 1, plant.n_x))
    P = np.zeros((N, n_p))
    Z = np.zeros((N, n_w))
    W = np.zeros((N, n_w))
    Y = np.zeros((N, plant.n_y))
    X[0] = x0
    I = np.eye(n_w)
    for k in range(N):
        x = X[k]
        p = p_ext[k] if exogenous else sched.forward(x, u[k], d[k])
        P[k] = p
        diag = p[bmap] if n_w else np.zeros(0)
        rhs = plant.C_z @ x + plant.D_zu @ u[k]
        try:
            z = (linalg.lu_solve(I - plant.D_zw * diag[None, :], rhs)
                 if n_w else rhs)
        except SingularMatrix as exc:
            raise SingularStep(k) from exc
        w = diag * z
        Z[k] = z
        W[k] = w
        Y[k] = plant.C_y @ x + plant.D_yw @ w + plant.D_yu @ u[k]
        X[k + 1] = plant.A_x @ x + plant.B_w @ w + plant.B_u @ u[k]
    return Trajectory(x=X, p=P, z=Z, w=W, y=Y)


def eliminate_to_ss(plant: LfrPlant, p):
    """Frozen state-space matrices (A, B, C, D)(p) after eliminating the
    latent variables at a fixed scheduling point."""
    diag = delta_diag(plant.delta, p)
    n_w = plant.n_w
    if n_w == 0:
        return (plant.A_x.copy(), plant.B_u.copy(),
                plant.C_y.copy(), plant.D_yu.copy())
    M = np.eye(n_w) - plant.D_zw * diag[None, :]
    try:
        Phi = linalg.lu_solve(M, np.eye(n_w))
    except SingularMatrix as exc:
        raise SingularPoint(f"I - D_zw*Delta(p) singular at p={p}") from exc
    DP = diag[:, None] * Phi  # Delta(p) @ Phi
    A = plant.A_x + plant.B_w @ DP @ plant.C_z
    B = plant.B_u + plant.B_w @ DP @ plant.D_zu
    C = plant.C_y + plant.D_yw @ DP @ plant.C_z
    D = plant.D_yu + plant.D_yw @ DP @ plant.D_zu
    return A, B, C, D


@dataclass(frozen=True)
class AffineSsModel:
    """State-space model affine in the scheduling variable:
    A(p) = A0 + sum_i p_i * A_inc[i], and likewise for B, C, D."""

    A0: np.ndarray
    B0: np.ndarray
    C0: np.ndarray
    D0: np.ndarray
    A_inc: tuple[np.ndarray, ...] = field(default_factory=tuple)
    B_inc: tuple[np.ndarray, ...] = field(default_factory=tuple)
    C_inc: tuple[np.ndarray, ...] = field(default_factory=tuple)
    D_inc: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("A0", "B0", "C0", "D0"):
            object.__setattr__(self, name,
                               np.ascontiguousarray(getattr(self, name),
                                                    dtype=np.float64))
        for name in ("A_inc", "B_inc", "C_inc", "D_inc"):
            mats = tuple(np.ascontiguousarray(M, dtype=np.float64)
                         for M in getattr(self, name))
            object.__setattr__(self, name, mats)
        n = len(self.A_inc)
        if not (len(self.B_inc) == len(self.C_inc) == len(self.D_inc) == n):
            raise DimensionMismatch("increment lists must have equal length")
        base = {"A": self.A0.shape, "B": self.B0.shape,
                "C": self.C0.shape, "D": self.D0.shape}
        for i in range(n):
            for tag, M in (("A", self.A_inc[i]), ("B", self.B_inc[i]),
                           ("C", self.C_inc[i]), ("D", self.D_inc[i])):
                if M.shape != base[tag]:
                    raise DimensionMismatch(
                        f"{tag}_inc[{i}] has shape {M.shape}, expected {base[tag]}"
                    )

    @property
    def n_p(self) -> int:
        return len(self.A_inc)

    def evaluate(self, p):
        """(A, B, C, D) at a scheduling point."""
        p = np.asarray(p, dtype=np.float64)
        A, B = self.A0.copy(), self.B0.copy()
        C, D = self.C0.copy(), self.D0.copy()
        for i in range(self.n_p):
            A += p[i] * self.A_inc[i]
            B += p[i] * self.B_inc[i]
            C += p[i] * self.C_inc[i]
            D += p[i] * self.D_inc[i]
        return A, B, C, D


def affine_ss_to_lfr(m: AffineSsModel, rank_tol: float | None = None) -> LfrPlant:
    """Exact LFR realization of an affine model via truncated SVD of each
    increment block [A_i B_i; C_i D_i]; eta_i is the numerical rank.

    Rank-zero increments are dropped from the Delta structure with a
    warning.  The result has D_zw = 0 and reproduces the affine evaluation
    through eliminate_to_ss at every p.
    """
    n_x, n_u = m.B0.shape
    n_y = m.C0.shape[0]
    eta, U_parts, V_parts = [], [], []
    for i in range(m.n_p):
        T = np.block([[m.A_inc[i], m.B_inc[i]], [m.C_inc[i], m.D_inc[i]]])
        U, s, Vt = np.linalg.svd(T, full_matrices=False)
        tol = (1e-9 * s[0] if rank_tol is None else rank_tol) if s.size else 0.0
        r = int(np.sum(s > tol))
        if r == 0:
            warnings.warn(f"increment {i} has numerical rank 0; dropped from eta")
            continue
        sq = np.sqrt(s[:r])
        U_parts.append(U[:, :r] * sq[None, :])
        V_parts.append(sq[:, None] * Vt[:r, :])
        eta.append(r)
    n_w = sum(eta)
    delta = DeltaStructure(tuple(eta)) if eta else DeltaStructure(())
    if n_w:
        Ufull = np.hstack(U_parts)  # (n_x+n_y, n_w)
        Vfull = np.vstack(V_parts)  # (n_w, n_x+n_u)
        B_w, D_yw = Ufull[:n_x], Ufull[n_x:]
        C_z, D_zu = Vfull[:, :n_x], Vfull[:, n_x:]
    else:
        B_w = np.zeros((n_x, 0))
        D_yw = np.zeros((n_y, 0))
        C_z = np.zeros((0, n_x))
        D_zu = np.zeros((0, n_u))
    return LfrPlant(
        A_x=m.A0, B_w=B_w, B_u=m.B0,
        C_z=C_z, D_zw=np.zeros((n_w, n_w)), D_zu=D_zu,
        C_y=m.C0, D_yw=D_yw, D_yu=m.D0,
        delta=delta,
    )


def normalize_scheduling(plant: LfrPlant, box: SchedulingBox):
    """Re-center and scale the scheduling variables onto [-1, 1]^n_p.

    Returns (normalized plant, center c, half-width s) so that the original
    model at p = c + s * p_bar equals the normalized model at p_bar.  The
    constant part Delta(c) is absorbed by closing the loop through
    Phi0 = (I - D_zw Delta(c))^{-1}; raises SingularCenter when that
    closure is singular.
    """
    if box.n_p != plant.n_p:
        raise DimensionMismatch("box dimension does not match the plant")
    c = box.center
    s = box.half_width
    n_w = plant.n_w
    if n_w == 0:
        return plant, c, s
    bmap = plant.delta.block_map()
    dc = c[bmap]
    sc = s[bmap]
    M0 = np.eye(n_w) - plant.D_zw * dc[None, :]
    try:
        Phi0 = linalg.lu_solve(M0, np.eye(n_w))
    except SingularMatrix as exc:
        raise SingularCenter(f"singular closure at box center {c}") from exc
    DcPhi = dc[:, None] * Phi0  # Delta(c) @ Phi0
    S_eta = sc[:, None]  # row scaling by diag(s_i I_eta_i)
    plant_bar = LfrPlant(
        A_x=plant.A_x + plant.B_w @ DcPhi @ plant.C_z,
        B_w=plant.B_w + plant.B_w @ DcPhi @ plant.D_zw,
        B_u=plant.B_u + plant.B_w @ DcPhi @ plant.D_zu,
        C_z=S_eta * (Phi0 @ plant.C_z),
        D_zw=S_eta * (Phi0 @ plant.D_zw),
        D_zu=S_eta * (Phi0 @ plant.D_zu),
        C_y=plant.C_y + plant.D_yw @ DcPhi @ plant.C_z,
        D_yw=plant.D_yw + plant.D_yw @ DcPhi @ plant.D_zw,
        D_yu=plant.D_yu + plant.D_yw @ DcPhi @ plant.D_zu,
        delta=plant.delta,
    )
    return plant_bar, c, s
