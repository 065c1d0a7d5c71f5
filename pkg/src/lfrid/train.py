"""Estimation machinery: flat parameter vector management, simulation-error
loss with l2 regularization, exact reverse-mode gradients through the full
rollout (including the well-posed feedthrough construction), Adam and
L-BFGS optimizers, and the two-stage multi-start fit procedure.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, bench, linalg
from .errors import AllRestartsFailed, DimensionMismatch, LineSearchFailure
from .lfr import DeltaStructure, LfrPlant, WellPosedFactors, build_Dzw, build_N
from .model import LfrModel
from .sched import SchedulingNet, xavier_init

__all__ = [
    "TrainConfig",
    "ParamLayout",
    "Problem",
    "FitResult",
    "loss",
    "loss_and_gradient",
    "adam_run",
    "lbfgs_run",
    "init_params",
    "build_model",
    "fit",
]


@dataclass(frozen=True)
class TrainConfig:
    """Structure and optimizer settings for one estimation run."""

    mode: str  # "affine" | "rational"
    n_x: int
    eta: tuple[int, ...]
    hidden: tuple[int, ...] = ()
    adam_epochs: int = 1000
    lbfgs_epochs: int = 4000
    adam_step: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    lbfgs_memory: int = 10
    reg_rho: float = 1e-4
    restarts: int = 25
    seed: int = 0
    epsilon: float = 1e-3
    normalize_data: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.mode not in ("affine", "rational"):
            raise ValueError(f"mode must be 'affine' or 'rational', got {self.mode!r}")
        object.__setattr__(self, "eta", tuple(int(e) for e in self.eta))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_x < 1 or self.restarts < 1:
            raise ValueError("n_x and restarts must be positive")
        if self.reg_rho < 0:
            raise ValueError("reg_rho must be >= 0")

    @property
    def n_p(self) -> int:
        return len(self.eta)

    @property
    def n_w(self) -> int:
        return sum(self.eta)


class ParamLayout:
    """Index map partitioning the flat parameter vector into named blocks.

    Block order: plant blocks, well-posed factors (rational mode only),
    scheduling-net parameters, initial state.  flatten/unflatten round-trip
    exactly.
    """

    def __init__(self, cfg: TrainConfig, n_u: int, n_y: int, n_d: int = 0):
        n_x, n_w, n_p = cfg.n_x, cfg.n_w, cfg.n_p
        in_dim = n_x + n_u + n_d
        entries: list[tuple[str, tuple[int, ...]]] = [
            ("A_x", (n_x, n_x)), ("B_w", (n_x, n_w)), ("B_u", (n_x, n_u)),
            ("C_z", (n_w, n_x)), ("D_zu", (n_w, n_u)),
            ("C_y", (n_y, n_x)), ("D_yw", (n_y, n_w)), ("D_yu", (n_y, n_u)),
        ]
        if cfg.mode == "rational":
            entries += [
                ("dA_lower", (n_w * (n_w + 1) // 2,)),
                ("dB_upper", (n_w * (n_w - 1) // 2,)),
                ("d_d", (n_w,)),
            ]
        width = in_dim
        for l, h in enumerate(cfg.hidden):
            entries += [(f"hidden_W{l}", (h, width)), (f"hidden_b{l}", (h,))]
            width = h
        if cfg.hidden:
            entries.append(("head_W", (n_p, width)))
        entries += [("W_x", (n_p, n_x)), ("W_u", (n_p, n_u))]
        if n_d:
            entries.append(("W_d", (n_p, n_d)))
        entries += [("b", (n_p,)), ("x0", (n_x,))]

        self.cfg = cfg
        self.n_u, self.n_y, self.n_d = n_u, n_y, n_d
        self.shapes = dict(entries)
        self.slices: dict[str, slice] = {}
        off = 0
        for name, shape in entries:
            size = int(np.prod(shape)) if shape else 1
            self.slices[name] = slice(off, off + size)
            off += size
        self.size = off

    def get(self, theta: np.ndarray, name: str) -> np.ndarray:
        return theta[self.slices[name]].reshape(self.shapes[name])

    def flatten(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        theta = np.zeros(self.size)
        for name, sl in self.slices.items():
            theta[sl] = np.asarray(parts[name], dtype=np.float64).ravel()
        return theta

    def unflatten(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return {name: self.get(theta, name).copy() for name in self.slices}


def _factors_from_theta(layout: ParamLayout, theta: np.ndarray) -> WellPosedFactors:
    cfg = layout.cfg
    return WellPosedFactors(
        n_w=cfg.n_w,
        dA_lower=layout.get(theta, "dA_lower"),
        dB_upper=layout.get(theta, "dB_upper"),
        d_d=layout.get(theta, "d_d"),
        epsilon=cfg.epsilon,
    )


def _net_from_theta(layout: ParamLayout, theta: np.ndarray) -> SchedulingNet:
    cfg = layout.cfg
    g = lambda name: layout.get(theta, name)
    return SchedulingNet(
        W_x=g("W_x"), W_u=g("W_u"),
        W_d=g("W_d") if layout.n_d else np.zeros((cfg.n_p, 0)),
        b=g("b"),
        hidden_W=tuple(g(f"hidden_W{l}") for l in range(len(cfg.hidden))),
        hidden_b=tuple(g(f"hidden_b{l}") for l in range(len(cfg.hidden))),
        head_W=g("head_W") if cfg.hidden else np.zeros((cfg.n_p, 0)),
    )


class Problem:
    """Loss and gradient of the simulation-error criterion on one dataset.

    Wraps the compiled rollout kernels; owns the tape and gradient buffers.
    `p_ext` switches the scheduling source from the trained net to an
    exogenous sequence (the plant parameters are still trained).
    """

    def __init__(self, cfg: TrainConfig, data: bench.Dataset,
                 p_ext: np.ndarray | None = None):
        self.cfg = cfg
        self.data = data
        self.layout = ParamLayout(cfg, data.n_u, data.n_y, data.n_d)
        self.use_net = p_ext is None
        N = data.N
        n_p = cfg.n_p
        if p_ext is None:
            self.p_ext = np.zeros((N, n_p))
        else:
            p_ext = np.ascontiguousarray(p_ext, dtype=np.float64)
            if p_ext.shape != (N, n_p):
                raise DimensionMismatch(
                    f"p_ext must have shape {(N, n_p)}, got {p_ext.shape}")
            self.p_ext = p_ext
        self.bmap = DeltaStructure(cfg.eta).block_map() if cfg.eta else \
            np.zeros(0, dtype=np.int64)
        self.widths = np.array(
            [cfg.n_x + data.n_u + data.n_d, *cfg.hidden], dtype=np.int64)
        L = len(cfg.hidden)
        mw = int(self.widths.max()) if L else 0
        self._mw = mw
        self._tape = self._alloc_tape(N)
        g = {}
        for name in ("A_x", "B_w", "B_u", "C_z", "D_zw", "D_zu",
                     "C_y", "D_yw", "D_yu"):
            shape = ((cfg.n_w, cfg.n_w) if name == "D_zw"
                     else self.layout.shapes[name])
            g[name] = np.zeros(shape)
        g["HW"] = np.zeros((L, mw, mw))
        g["Hb"] = np.zeros((L, mw))
        g["head_W"] = np.zeros((n_p, cfg.hidden[-1] if L else 0))
        g["W_x"] = np.zeros((n_p, cfg.n_x))
        g["W_u"] = np.zeros((n_p, data.n_u))
        g["W_d"] = np.zeros((n_p, data.n_d))
        g["b"] = np.zeros(n_p)
        g["x0"] = np.zeros(cfg.n_x)
        self._g = g

    def _alloc_tape(self, N: int):
        cfg = self.cfg
        L = len(cfg.hidden)
        return {
            "X": np.zeros((N + 1, cfg.n_x)),
            "P": np.zeros((N, cfg.n_p)),
            "Z": np.zeros((N, cfg.n_w)),
            "H": np.zeros((L, N, self._mw)),
            "Yh": np.zeros((N, self.data.n_y)),
        }

    def _kernel_net_args(self, theta: np.ndarray):
        cfg, layout = self.cfg, self.layout
        L = len(cfg.hidden)
        mw = self._mw
        HW = np.zeros((L, mw, mw))
        Hb = np.zeros((L, mw))
        for l in range(L):
            W = layout.get(theta, f"hidden_W{l}")
            HW[l, :W.shape[0], :W.shape[1]] = W
            Hb[l, :W.shape[0]] = layout.get(theta, f"hidden_b{l}")
        Whead = (np.ascontiguousarray(layout.get(theta, "head_W"))
                 if L else np.zeros((cfg.n_p, 0)))
        Wd = (np.ascontiguousarray(layout.get(theta, "W_d"))
              if layout.n_d else np.zeros((cfg.n_p, 0)))
        return (HW, Hb, self.widths, Whead,
                np.ascontiguousarray(layout.get(theta, "W_x")),
                np.ascontiguousarray(layout.get(theta, "W_u")),
                Wd,
                np.ascontiguousarray(layout.get(theta, "b")))

    def _blocks(self, theta: np.ndarray):
        layout = self.layout
        blocks = [np.ascontiguousarray(layout.get(theta, n))
                  for n in ("A_x", "B_w", "B_u", "C_z")]
        if self.cfg.mode == "rational":
            Dzw = build_Dzw(_factors_from_theta(layout, theta))
        else:
            Dzw = np.zeros((self.cfg.n_w, self.cfg.n_w))
        blocks.append(np.ascontiguousarray(Dzw))
        blocks += [np.ascontiguousarray(layout.get(theta, n))
                   for n in ("D_zu", "C_y", "D_yw", "D_yu")]
        return blocks

    def _forward(self, theta: np.ndarray, tape=None):
        t = tape if tape is not None else self._tape
        blocks = self._blocks(theta)
        net_args = self._kernel_net_args(theta)
        status, step, fit = _kernels.rollout_forward(
            *blocks, self.bmap, self.use_net, *net_args,
            self.p_ext, self.data.u, self.data.d, self.data.y,
            np.ascontiguousarray(self.layout.get(theta, "x0")),
            t["X"], t["P"], t["Z"], t["H"], t["Yh"])
        return status, step, fit, blocks, net_args

    def loss(self, theta: np.ndarray) -> float:
        """V = (1/N) sum ||y_k - yhat_k||^2 + rho ||theta||^2; infinite when
        the rollout diverges or hits a singular latent solve."""
        status, _, fit, _, _ = self._forward(theta)
        if status != _kernels.STATUS_OK:
            return np.inf
        return fit + self.cfg.reg_rho * float(theta @ theta)

    def loss_and_gradient(self, theta: np.ndarray):
        """Exact reverse-mode gradient of loss wrt every parameter entry."""
        status, _, fit, blocks, net_args = self._forward(theta)
        if status != _kernels.STATUS_OK:
            return np.inf, np.zeros_like(theta)
        g = self._g
        for arr in g.values():
            arr[...] = 0.0
        t = self._tape
        _kernels.rollout_backward(
            *blocks, self.bmap, self.use_net, *net_args,
            self.data.u, self.data.d, self.data.y,
            t["X"], t["P"], t["Z"], t["H"], t["Yh"],
            g["A_x"], g["B_w"], g["B_u"], g["C_z"], g["D_zw"], g["D_zu"],
            g["C_y"], g["D_yw"], g["D_yu"],
            g["HW"], g["Hb"], g["head_W"], g["W_x"], g["W_u"], g["W_d"],
            g["b"], g["x0"])
        grad = np.zeros_like(theta)
        layout = self.layout
        for name in ("A_x", "B_w", "B_u", "C_z", "D_zu", "C_y", "D_yw", "D_yu"):
            grad[layout.slices[name]] = g[name].ravel()
        if self.cfg.mode == "rational":
            grad[layout.slices["dA_lower"]], grad[layout.slices["dB_upper"]], \
                grad[layout.slices["d_d"]] = self._factor_gradient(theta, g["D_zw"])
        for l in range(len(self.cfg.hidden)):
            W = layout.shapes[f"hidden_W{l}"]
            grad[layout.slices[f"hidden_W{l}"]] = g["HW"][l, :W[0], :W[1]].ravel()
            grad[layout.slices[f"hidden_b{l}"]] = g["Hb"][l, :W[0]]
        if self.cfg.hidden:
            grad[layout.slices["head_W"]] = g["head_W"].ravel()
        grad[layout.slices["W_x"]] = g["W_x"].ravel()
        grad[layout.slices["W_u"]] = g["W_u"].ravel()
        if layout.n_d:
            grad[layout.slices["W_d"]] = g["W_d"].ravel()
        grad[layout.slices["b"]] = g["b"]
        grad[layout.slices["x0"]] = g["x0"]
        rho = self.cfg.reg_rho
        value = fit + rho * float(theta @ theta)
        grad += 2.0 * rho * theta
        return value, grad

    def _factor_gradient(self, theta: np.ndarray, gDzw: np.ndarray):
        """Chain the feedthrough-block gradient back onto the free factors:
        adjoint of expm via L(A, .)* = L(A^T, .), then the algebraic
        differentials of the positive-definite construction with the
        triangular masks."""
        f = _factors_from_theta(self.layout, theta)
        n_w = f.n_w
        N = build_N(f)
        # Dzw = expm(-N)  =>  Nbar = -L((-N)^T, Dzw_bar)
        _, Nbar = linalg.expm_frechet(-N.T, gDzw)
        Nbar = -Nbar
        psi = np.exp(f.d_d)
        DA = f.D_A()
        DB = f.D_B()
        K = DA.T @ DA + DB - DB.T + f.epsilon * np.eye(n_w)
        Kbar = psi[:, None] * Nbar
        psibar = np.sum(Nbar * K, axis=1)
        g_dd = psi * psibar
        GA = DA @ (Kbar + Kbar.T)
        g_dA = GA[np.tril_indices(n_w)]
        GB = Kbar - Kbar.T
        g_dB = GB[np.triu_indices(n_w, k=1)]
        return g_dA, g_dB, g_dd

    def simulate_output(self, theta: np.ndarray, data: bench.Dataset,
                        x0: np.ndarray | None = None,
                        p_ext: np.ndarray | None = None) -> np.ndarray:
        """Fast rollout of the model defined by theta over another record;
        returns the simulated output (non-finite rows on divergence)."""
        if (data.n_u, data.n_y, data.n_d) != \
                (self.data.n_u, self.data.n_y, self.data.n_d):
            raise DimensionMismatch("dataset channels do not match the problem")
        tape = {
            "X": np.zeros((data.N + 1, self.cfg.n_x)),
            "P": np.zeros((data.N, self.cfg.n_p)),
            "Z": np.zeros((data.N, self.cfg.n_w)),
            "H": np.zeros((len(self.cfg.hidden), data.N, self._mw)),
            "Yh": np.full((data.N, data.n_y), np.nan),
        }
        blocks = self._blocks(theta)
        net_args = self._kernel_net_args(theta)
        use_net = self.use_net and p_ext is None
        pe = (np.zeros((data.N, self.cfg.n_p)) if p_ext is None
              else np.ascontiguousarray(p_ext, dtype=np.float64))
        x0 = (np.zeros(self.cfg.n_x) if x0 is None
              else np.asarray(x0, dtype=np.float64))
        status, step, _ = _kernels.rollout_forward(
            *blocks, self.bmap, use_net, *net_args,
            pe, data.u, data.d, data.y, x0,
            tape["X"], tape["P"], tape["Z"], tape["H"], tape["Yh"])
        if status != _kernels.STATUS_OK:
            tape["Yh"][step:] = np.nan
        return tape["Yh"]


def loss(theta, data: bench.Dataset, cfg: TrainConfig,
         p_ext: np.ndarray | None = None) -> float:
    return Problem(cfg, data, p_ext=p_ext).loss(np.asarray(theta, dtype=np.float64))


def loss_and_gradient(theta, data: bench.Dataset, cfg: TrainConfig,
                      p_ext: np.ndarray | None = None):
    return Problem(cfg, data, p_ext=p_ext).loss_and_gradient(
        np.asarray(theta, dtype=np.float64))


def adam_run(fun, theta0, steps: int, step_size: float = 1e-3,
             betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """Standard Adam recursion on fun(theta) -> (loss, grad).

    A proposed iterate with infinite loss is rejected: the previous point is
    kept and the step is halved for that iteration.  Returns (theta, trace).
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    b1, b2 = betas
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = []
    value, grad = fun(theta)
    for t in range(1, steps + 1):
        trace.append(value)
        if not np.isfinite(value):
            break
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        direction = mhat / (np.sqrt(vhat) + eps)
        alpha = step_size
        for _ in range(40):
            cand = theta - alpha * direction
            cand_value, cand_grad = fun(cand)
            if np.isfinite(cand_value):
                theta, value, grad = cand, cand_value, cand_grad
                break
            alpha *= 0.5
        # all halvings failed: keep the previous point for this iteration
    return theta, trace


def _wolfe_line_search(fun, x, f0, g0, direction, c1=1e-4, c2=0.9,
                       max_evals=25):
    """Strong-Wolfe line search (bracket + zoom with bisection).

    Returns (alpha, f, g, x_new) or raises LineSearchFailure.  Non-finite
    trial values are treated as failed sufficient decrease.
    """
    d0 = float(g0 @ direction)
    if d0 >= 0.0:
        raise LineSearchFailure("search direction is not a descent direction")

    def phi(alpha):
        xa = x + alpha * direction
        f, g = fun(xa)
        dphi = float(g @ direction) if np.isfinite(f) else np.nan
        return f, g, dphi, xa

    alpha_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = 1.0
    best = None
    lo = hi = None
    for _ in range(max_evals):
        f, g, dphi, xa = phi(alpha)
        if (not np.isfinite(f)) or f > f0 + c1 * alpha * d0 or \
                (best is not None and f >= f_prev):
            lo, hi = (alpha_prev, f_prev, d_prev), (alpha, f, dphi)
            break
        if abs(dphi) <= -c2 * d0:
            return alpha, f, g, xa
        if dphi >= 0.0:
            lo, hi = (alpha, f, dphi), (alpha_prev, f_prev, d_prev)
            break
        best = (alpha, f, g, xa)
        alpha_prev, f_prev, d_prev = alpha, f, dphi
        alpha *= 2.0
    else:
        if best is not None:
            return best
        raise LineSearchFailure("bracketing stage exhausted its budget")

    for _ in range(max_evals):
        a_lo, f_lo, d_lo = lo
        a_hi, f_hi, _ = hi
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
        # quadratic interpolation, guarded by bisection
        denom = 2.0 * (f_hi - f_lo - d_lo * (a_hi - a_lo))
        if np.isfinite(denom) and abs(denom) > 1e-300:
            alpha = a_lo - d_lo * (a_hi - a_lo) ** 2 / denom
        else:
            alpha = 0.5 * (a_lo + a_hi)
        span = abs(a_hi - a_lo)
        if not np.isfinite(alpha) or \
                not (min(a_lo, a_hi) + 0.1 * span <= alpha
                     <= max(a_lo, a_hi) - 0.1 * span):
            alpha = 0.5 * (a_lo + a_hi)
        f, g, dphi, xa = phi(alpha)
        if (not np.isfinite(f)) or f > f0 + c1 * alpha * d0 or f >= f_lo:
            hi = (alpha, f, dphi)
        else:
            if abs(dphi) <= -c2 * d0:
                return alpha, f, g, xa
            if dphi * (a_hi - a_lo) >= 0.0:
                hi = lo
            lo = (alpha, f, dphi)
    raise LineSearchFailure("zoom stage could not satisfy the Wolfe conditions")


def lbfgs_run(fun, theta0, max_iters: int, memory: int = 10,
              grad_tol: float = 1e-9, rel_tol: float = 1e-12):
    """Two-loop-recursion L-BFGS with a strong-Wolfe line search
    (c1 = 1e-4, c2 = 0.9); unconstrained.

    Terminates on ||g||_inf < grad_tol, relative loss decrease < rel_tol,
    max_iters, or a failed line search (returning the best iterate so far).
    Returns (theta, trace).
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    value, grad = fun(theta)
    trace = [value]
    if not np.isfinite(value) or max_iters == 0:
        return theta, trace
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    gamma = 1.0
    for _ in range(max_iters):
        if np.max(np.abs(grad)) < grad_tol:
            break
        q = grad.copy()
        alphas = []
        for s, y, r in zip(reversed(s_hist), reversed(y_hist),
                           reversed(rho_hist)):
            a = r * float(s @ q)
            alphas.append(a)
            q -= a * y
        q *= gamma
        for (s, y, r), a in zip(zip(s_hist, y_hist, rho_hist),
                                reversed(alphas)):
            beta = r * float(y @ q)
            q += (a - beta) * s
        direction = -q
        try:
            _, new_value, new_grad, new_theta = _wolfe_line_search(
                fun, theta, value, grad, direction)
        except LineSearchFailure:
            break
        s = new_theta - theta
        y = new_grad - grad
        sy = float(s @ y)
        if sy > 1e-14 * float(y @ y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            gamma = sy / float(y @ y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        decrease = value - new_value
        theta, value, grad = new_theta, new_value, new_grad
        trace.append(value)
        if decrease < rel_tol * max(1.0, abs(value)):
            break
    return theta, trace


def init_params(cfg: TrainConfig, n_u: int, n_y: int, n_d: int = 0,
                rng=None) -> np.ndarray:
    """Pseudo-random initialization: A_x = 0.5 I, B_w = 0, small uniform
    input/output blocks, zero output feedthroughs; rational factors with
    uniform lower triangle of D_A and normal(1,1) upper triangle of D_B;
    Xavier net weights with zero biases; zero initial state."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    layout = ParamLayout(cfg, n_u, n_y, n_d)
    n_x, n_w, n_p = cfg.n_x, cfg.n_w, cfg.n_p
    parts: dict[str, np.ndarray] = {
        "A_x": 0.5 * np.eye(n_x),
        "B_w": np.zeros((n_x, n_w)),
        "B_u": rng.uniform(-0.1, 0.1, (n_x, n_u)),
        "C_z": rng.uniform(-0.1, 0.1, (n_w, n_x)),
        "D_zu": rng.uniform(-0.1, 0.1, (n_w, n_u)),
        "C_y": rng.uniform(-0.1, 0.1, (n_y, n_x)),
        "D_yw": np.zeros((n_y, n_w)),
        "D_yu": np.zeros((n_y, n_u)),
    }
    if cfg.mode == "rational":
        parts["dA_lower"] = rng.uniform(0.0, 0.1, n_w * (n_w + 1) // 2)
        parts["dB_upper"] = rng.normal(1.0, 1.0, n_w * (n_w - 1) // 2)
        parts["d_d"] = np.zeros(n_w)
    net = xavier_init(n_p, n_x, n_u, n_d, hidden=cfg.hidden, rng=rng)
    for l in range(len(cfg.hidden)):
        parts[f"hidden_W{l}"] = net.hidden_W[l]
        parts[f"hidden_b{l}"] = net.hidden_b[l]
    if cfg.hidden:
        parts["head_W"] = net.head_W
    parts["W_x"] = net.W_x
    parts["W_u"] = net.W_u
    if n_d:
        parts["W_d"] = net.W_d
    parts["b"] = net.b
    parts["x0"] = np.zeros(n_x)
    return layout.flatten(parts)


def build_model(cfg: TrainConfig, layout: ParamLayout,
                theta: np.ndarray, scalers=None) -> LfrModel:
    """Assemble the user-facing model value from a flat parameter vector."""
    delta = DeltaStructure(cfg.eta) if cfg.eta else DeltaStructure(())
    factors = (_factors_from_theta(layout, theta)
               if cfg.mode == "rational" else None)
    Dzw = (build_Dzw(factors) if factors is not None
           else np.zeros((cfg.n_w, cfg.n_w)))
    plant = LfrPlant(
        A_x=layout.get(theta, "A_x"), B_w=layout.get(theta, "B_w"),
        B_u=layout.get(theta, "B_u"), C_z=layout.get(theta, "C_z"),
        D_zw=Dzw, D_zu=layout.get(theta, "D_zu"),
        C_y=layout.get(theta, "C_y"), D_yw=layout.get(theta, "D_yw"),
        D_yu=layout.get(theta, "D_yu"), delta=delta,
    )
    return LfrModel(
        mode=cfg.mode,
        plant=plant,
        factors=factors,
        net=_net_from_theta(layout, theta),
        x0=layout.get(theta, "x0"),
        scalers=scalers,
    )


@dataclass
class RestartResult:
    index: int
    seed: int
    theta: np.ndarray
    loss: float
    bfr_train: float
    bfr_val: float
    adam_trace: list = field(default_factory=list)
    lbfgs_trace: list = field(default_factory=list)
    failed: bool = False


@dataclass
class FitResult:
    model: LfrModel
    theta: np.ndarray
    cfg: TrainConfig
    best_index: int
    restarts: list[RestartResult]
    bfr_train: float
    bfr_val: float
    wall_seconds: float


def _run_restart(index: int, cfg: TrainConfig, train_data: bench.Dataset,
                 val_data: bench.Dataset, trace_cb=None) -> RestartResult:
    problem = Problem(cfg, train_data)
    n_u, n_y, n_d = train_data.n_u, train_data.n_y, train_data.n_d
    seed = cfg.seed + index
    theta = None
    for attempt in range(5):
        cand_seed = seed + 1_000_003 * attempt
        cand = init_params(cfg, n_u, n_y, n_d, rng=cand_seed)
        if np.isfinite(problem.loss(cand)):
            theta, seed = cand, cand_seed
            break
    if theta is None:
        return RestartResult(index, seed, np.zeros(problem.layout.size),
                             np.inf, 0.0, 0.0, failed=True)
    fun = problem.loss_and_gradient
    theta, adam_trace = adam_run(fun, theta, cfg.adam_epochs,
                                 step_size=cfg.adam_step, betas=cfg.adam_betas)
    if trace_cb is not None:
        trace_cb(index, "adam", adam_trace)
    theta, lbfgs_trace = lbfgs_run(fun, theta, cfg.lbfgs_epochs,
                                   memory=cfg.lbfgs_memory)
    if trace_cb is not None:
        trace_cb(index, "lbfgs", lbfgs_trace)
    final_loss = lbfgs_trace[-1] if lbfgs_trace else np.inf
    if not np.isfinite(final_loss):
        return RestartResult(index, seed, theta, np.inf, 0.0, 0.0,
                             adam_trace=adam_trace, lbfgs_trace=lbfgs_trace,
                             failed=True)
    yh_train = problem.simulate_output(theta, train_data,
                                       x0=problem.layout.get(theta, "x0"))
    yh_val = problem.simulate_output(theta, val_data)
    bfr_train = bench.bfr(train_data.y, yh_train) \
        if np.all(np.isfinite(yh_train)) else 0.0
    bfr_val = bench.bfr(val_data.y, yh_val) \
        if np.all(np.isfinite(yh_val)) else 0.0
    return RestartResult(index, seed, theta, float(final_loss),
                         bfr_train, bfr_val,
                         adam_trace=adam_trace, lbfgs_trace=lbfgs_trace)


def fit(cfg: TrainConfig, train_data: bench.Dataset,
        val_data: bench.Dataset, trace_cb=None) -> FitResult:
    """Two-stage multi-start estimation: per restart draw an initial point
    (redrawn up to 5 times if its loss is non-finite), run Adam then L-BFGS,
    and select the restart with the highest validation BFR (ties broken by
    restart index).  Deterministic given cfg.seed, independent of restart
    scheduling order."""
    if cfg.normalize_data:
        scalers = bench.Scalers.from_dataset(train_data)
        train_data = scalers.apply(train_data)
        val_data = scalers.apply(val_data)
    else:
        scalers = None
    t0 = time.perf_counter()
    indices = list(range(cfg.restarts))
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(
                lambda i: _run_restart(i, cfg, train_data, val_data, trace_cb),
                indices))
    else:
        results = [_run_restart(i, cfg, train_data, val_data, trace_cb)
                   for i in indices]
    ok = [r for r in results if not r.failed]
    if not ok:
        raise AllRestartsFailed(
            f"all {cfg.restarts} restarts ended with non-finite loss")
    best = max(ok, key=lambda r: (r.bfr_val, -r.index))
    layout = ParamLayout(cfg, train_data.n_u, train_data.n_y, train_data.n_d)
    model = build_model(cfg, layout, best.theta, scalers=scalers)
    return FitResult(
        model=model,
        theta=best.theta,
        cfg=cfg,
        best_index=best.index,
        restarts=results,
        bfr_train=best.bfr_train,
        bfr_val=best.bfr_val,
        wall_seconds=time.perf_counter() - t0,
    )
