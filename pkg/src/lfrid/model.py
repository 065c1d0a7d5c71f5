"""Self-scheduled model value and its on-disk document.

The document is JSON with nested row-major arrays; Python's float repr
round-trips every IEEE double exactly, so read(write(m)) reproduces all
reals bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bench import Scalers
from .errors import SchemaError
from .lfr import DeltaStructure, LfrPlant, Trajectory, WellPosedFactors, simulate
from .sched import SchedulingNet

__all__ = ["LfrModel", "write_model", "read_model"]

_BLOCK_NAMES = ("A_x", "B_w", "B_u", "C_z", "D_zw", "D_zu",
                "C_y", "D_yw", "D_yu")


@dataclass(frozen=True)
class LfrModel:
    """A trained (or hand-built) self-scheduled model: the plant, the
    generating factors of its feedthrough coupling block (rational mode),
    the scheduling net, the estimated initial state, and optional data
    scalers."""

    mode: str  # "affine" | "rational"
    plant: LfrPlant
    net: SchedulingNet
    x0: np.ndarray
    factors: WellPosedFactors | None = None
    scalers: Scalers | None = None

    def simulate(self, u, d=None, x0=None) -> Trajectory:
        """Self-scheduled rollout; scaling (when the model carries scalers)
        is applied to u and removed from the simulated output."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        if self.scalers is not None:
            u = (u - self.scalers.u_mean) / self.scalers.u_std
        traj = simulate(self.plant, self.net, u, d=d,
                        x0=self.x0 if x0 is None else x0)
        if self.scalers is not None:
            traj = Trajectory(x=traj.x, p=traj.p, z=traj.z, w=traj.w,
                              y=self.scalers.unscale_y(traj.y))
        return traj


def _arr(A) -> list:
    return np.asarray(A, dtype=np.float64).tolist()


def to_document(model: LfrModel) -> dict:
    plant = model.plant
    doc = {
        "format": "lfrid-model",
        "version": 1,
        "mode": model.mode,
        "dims": {
            "n_x": plant.n_x, "n_w": plant.n_w, "n_u": plant.n_u,
            "n_y": plant.n_y, "n_p": plant.n_p, "n_d": model.net.n_d,
        },
        "eta": list(plant.delta.eta),
        "blocks": {name: _arr(getattr(plant, name)) for name in _BLOCK_NAMES},
        "x0": _arr(model.x0),
        "scheduling_net": {
            "layers": [
                {"shape": list(W.shape), "weights": _arr(W), "bias": _arr(b),
                 "activation": "tanh"}
                for W, b in zip(model.net.hidden_W, model.net.hidden_b)
            ],
            "head": _arr(model.net.head_W),
            "bypass": {
                "W_x": _arr(model.net.W_x), "W_u": _arr(model.net.W_u),
                "W_d": _arr(model.net.W_d), "b": _arr(model.net.b),
            },
            "output_activation": "tanh",
        },
    }
    if model.factors is not None:
        f = model.factors
        doc["wellposed_factors"] = {
            "dA_lower": _arr(f.dA_lower), "dB_upper": _arr(f.dB_upper),
            "d_d": _arr(f.d_d), "epsilon": f.epsilon,
        }
    if model.scalers is not None:
        s = model.scalers
        doc["data_scalers"] = {
            "u_mean": _arr(s.u_mean), "u_std": _arr(s.u_std),
            "y_mean": _arr(s.y_mean), "y_std": _arr(s.y_std),
        }
    return doc


def from_document(doc: dict) -> LfrModel:
    if doc.get("format") != "lfrid-model":
        raise SchemaError("not a model document")
    mode = doc["mode"]
    eta = tuple(int(e) for e in doc["eta"])
    delta = DeltaStructure(eta) if eta else DeltaStructure(())
    blocks = {name: np.array(doc["blocks"][name], dtype=np.float64)
              for name in _BLOCK_NAMES}
    dims = doc["dims"]
    for name in _BLOCK_NAMES:  # 0-width blocks lose shape info in JSON
        rows, cols = _block_shape(name, dims)
        blocks[name] = blocks[name].reshape(rows, cols)
    plant = LfrPlant(delta=delta, **blocks)
    sn = doc["scheduling_net"]
    n_p, n_d = dims["n_p"], dims["n_d"]
    hidden_W = tuple(np.array(l["weights"], dtype=np.float64).reshape(l["shape"])
                     for l in sn["layers"])
    hidden_b = tuple(np.array(l["bias"], dtype=np.float64)
                     for l in sn["layers"])
    last = hidden_W[-1].shape[0] if hidden_W else 0
    net = SchedulingNet(
        W_x=np.array(sn["bypass"]["W_x"], dtype=np.float64).reshape(n_p, dims["n_x"]),
        W_u=np.array(sn["bypass"]["W_u"], dtype=np.float64).reshape(n_p, dims["n_u"]),
        W_d=np.array(sn["bypass"]["W_d"], dtype=np.float64).reshape(n_p, n_d),
        b=np.array(sn["bypass"]["b"], dtype=np.float64).reshape(n_p),
        hidden_W=hidden_W,
        hidden_b=hidden_b,
        head_W=np.array(sn["head"], dtype=np.float64).reshape(n_p, last),
    )
    factors = None
    if "wellposed_factors" in doc:
        f = doc["wellposed_factors"]
        factors = WellPosedFactors(
            n_w=dims["n_w"],
            dA_lower=np.array(f["dA_lower"], dtype=np.float64),
            dB_upper=np.array(f["dB_upper"], dtype=np.float64),
            d_d=np.array(f["d_d"], dtype=np.float64),
            epsilon=float(f["epsilon"]),
        )
    scalers = None
    if "data_scalers" in doc:
        s = doc["data_scalers"]
        scalers = Scalers(
            u_mean=np.array(s["u_mean"], dtype=np.float64),
            u_std=np.array(s["u_std"], dtype=np.float64),
            y_mean=np.array(s["y_mean"], dtype=np.float64),
            y_std=np.array(s["y_std"], dtype=np.float64),
        )
    return LfrModel(mode=mode, plant=plant, net=net,
                    x0=np.array(doc["x0"], dtype=np.float64),
                    factors=factors, scalers=scalers)


def _block_shape(name: str, dims: dict) -> tuple[int, int]:
    n_x, n_w = dims["n_x"], dims["n_w"]
    n_u, n_y = dims["n_u"], dims["n_y"]
    return {
        "A_x": (n_x, n_x), "B_w": (n_x, n_w), "B_u": (n_x, n_u),
        "C_z": (n_w, n_x), "D_zw": (n_w, n_w), "D_zu": (n_w, n_u),
        "C_y": (n_y, n_x), "D_yw": (n_y, n_w), "D_yu": (n_y, n_u),
    }[name]


def write_model(model: LfrModel, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(to_document(model), fh, indent=1)


def read_model(path) -> LfrModel:
    with open(Path(path)) as fh:
        return from_document(json.load(fh))
