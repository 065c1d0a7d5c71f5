"""Parameterized scheduling maps.

The map is a one-block ResNet: a tanh feedforward stack on [x; u; d] plus a
linear bypass, with a tanh on the summed output so every scheduling value
stays strictly inside the unit ball.  With no hidden layers it degenerates
to the linear-with-saturation map tanh(W_x x + W_u u + W_d d + b).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

__all__ = ["SchedulingNet", "xavier_init"]


@dataclass(frozen=True)
class SchedulingNet:
    """Scheduling map p = tanh(bypass + head(hidden_stack([x; u; d]))).

    hidden_W[l] has shape (width_l, width_{l-1}) with width_0 = n_x+n_u+n_d;
    head_W maps the last hidden layer to n_p and is absent (shape (n_p, 0))
    when there are no hidden layers.
    """

    W_x: np.ndarray  # (n_p, n_x)
    W_u: np.ndarray  # (n_p, n_u)
    W_d: np.ndarray  # (n_p, n_d)
    b: np.ndarray    # (n_p,)
    hidden_W: tuple[np.ndarray, ...] = field(default_factory=tuple)
    hidden_b: tuple[np.ndarray, ...] = field(default_factory=tuple)
    head_W: np.ndarray | None = None

    def __post_init__(self):
        for name in ("W_x", "W_u", "W_d", "b"):
            object.__setattr__(self, name,
                               np.ascontiguousarray(getattr(self, name),
                                                    dtype=np.float64))
        object.__setattr__(self, "hidden_W",
                           tuple(np.ascontiguousarray(W, dtype=np.float64)
                                 for W in self.hidden_W))
        object.__setattr__(self, "hidden_b",
                           tuple(np.ascontiguousarray(v, dtype=np.float64)
                                 for v in self.hidden_b))
        if len(self.hidden_W) != len(self.hidden_b):
            raise DimensionMismatch("hidden weights and biases must pair up")
        head = self.head_W
        if head is None:
            last = self.hidden_W[-1].shape[0] if self.hidden_W else 0
            head = np.zeros((self.n_p, last))
        object.__setattr__(self, "head_W",
                           np.ascontiguousarray(head, dtype=np.float64))
        width = self.input_dim
        for l, (W, bv) in enumerate(zip(self.hidden_W, self.hidden_b)):
            if W.shape[1] != width or bv.shape != (W.shape[0],):
                raise DimensionMismatch(f"hidden layer {l} shapes do not chain")
            width = W.shape[0]
        if self.hidden_W and self.head_W.shape != (self.n_p, width):
            raise DimensionMismatch("head shape does not match last hidden layer")

    @property
    def n_p(self) -> int:
        return self.W_x.shape[0]

    @property
    def n_x(self) -> int:
        return self.W_x.shape[1]

    @property
    def n_u(self) -> int:
        return self.W_u.shape[1]

    @property
    def n_d(self) -> int:
        return self.W_d.shape[1]

    @property
    def input_dim(self) -> int:
        return self.n_x + self.n_u + self.n_d

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W in self.hidden_W)

    def forward(self, x, u, d=None) -> np.ndarray:
        """Evaluate the map at one (x, u, d) triple; returns p with
        ||p||_inf < 1."""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        d = (np.zeros(0) if d is None else np.asarray(d, dtype=np.float64))
        if x.shape != (self.n_x,) or u.shape != (self.n_u,) or d.shape != (self.n_d,):
            raise DimensionMismatch(
                f"expected shapes ({self.n_x},), ({self.n_u},), ({self.n_d},); "
                f"got {x.shape}, {u.shape}, {d.shape}"
            )
        a = self.W_x @ x + self.W_u @ u + self.W_d @ d + self.b
        if self.hidden_W:
            h = np.concatenate([x, u, d])
            for W, bv in zip(self.hidden_W, self.hidden_b):
                h = np.tanh(W @ h + bv)
            a = a + self.head_W @ h
        return np.tanh(a)

    def input_jacobian(self, x, u, d=None) -> np.ndarray:
        """Analytic Jacobian of forward wrt the stacked input [x; u; d],
        shape (n_p, n_x + n_u + n_d)."""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        d = (np.zeros(0) if d is None else np.asarray(d, dtype=np.float64))
        a = self.W_x @ x + self.W_u @ u + self.W_d @ d + self.b
        J = np.hstack([self.W_x, self.W_u, self.W_d])
        if self.hidden_W:
            h = np.concatenate([x, u, d])
            Jh = np.eye(self.input_dim)
            for W, bv in zip(self.hidden_W, self.hidden_b):
                s = W @ h + bv
                h = np.tanh(s)
                Jh = (1.0 - h * h)[:, None] * (W @ Jh)
            a = a + self.head_W @ h
            J = J + self.head_W @ Jh
        p = np.tanh(a)
        return (1.0 - p * p)[:, None] * J

    def param_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter arrays in canonical order (hidden stack, head,
        bypass)."""
        out: list[tuple[str, np.ndarray]] = []
        for l, (W, bv) in enumerate(zip(self.hidden_W, self.hidden_b)):
            out.append((f"hidden_W{l}", W))
            out.append((f"hidden_b{l}", bv))
        if self.hidden_W:
            out.append(("head_W", self.head_W))
        out.append(("W_x", self.W_x))
        out.append(("W_u", self.W_u))
        if self.n_d:
            out.append(("W_d", self.W_d))
        out.append(("b", self.b))
        return out


def xavier_init(n_p: int, n_x: int, n_u: int, n_d: int = 0,
                hidden: tuple[int, ...] = (), rng=None) -> SchedulingNet:
    """Draw every weight matrix uniform on +-sqrt(6/(fan_in+fan_out));
    biases start at zero.  Deterministic for a fixed rng seed."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng

    def draw(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols)) if (rows + cols) else 0.0
        return rng.uniform(-lim, lim, size=(rows, cols))

    in_dim = n_x + n_u + n_d
    hidden_W, hidden_b = [], []
    width = in_dim
    for h in hidden:
        hidden_W.append(draw(h, width))
        hidden_b.append(np.zeros(h))
        width = h
    head_W = draw(n_p, width) if hidden else np.zeros((n_p, 0))
    return SchedulingNet(
        W_x=draw(n_p, n_x),
        W_u=draw(n_p, n_u),
        W_d=draw(n_p, n_d),
        b=np.zeros(n_p),
        hidden_W=tuple(hidden_W),
        hidden_b=tuple(hidden_b),
        head_W=head_W,
    )
