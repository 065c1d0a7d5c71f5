"""Benchmark data generation and evaluation metric.

Provides the discrete-time nonlinear mass-spring-damper system used for the
affine-vs-rational comparison, random-phase multisine input design with a
flat spectrum on the DFT grid, calibrated output noise, dataset CSV I/O,
and the best-fit-rate metric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateReference, DimensionMismatch, EmptyBand, \
    ParseError, SchemaError

__all__ = [
    "Dataset",
    "MsdParams",
    "Scalers",
    "multisine",
    "msd_step",
    "generate_msd_dataset",
    "bfr",
    "read_csv",
    "write_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Sampled input-output record with an optional exogenous channel."""

    name: str
    u: np.ndarray  # (N, n_u)
    y: np.ndarray  # (N, n_y)
    d: np.ndarray | None = None  # (N, n_d); None means n_d = 0
    ts: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        u = np.ascontiguousarray(np.atleast_2d(self.u), dtype=np.float64)
        y = np.ascontiguousarray(np.atleast_2d(self.y), dtype=np.float64)
        d = (np.zeros((u.shape[0], 0)) if self.d is None
             else np.ascontiguousarray(np.atleast_2d(self.d), dtype=np.float64))
        if u.ndim != 2 or y.ndim != 2 or d.ndim != 2:
            raise DimensionMismatch("channels must be 2-D (N, channels)")
        if not (u.shape[0] == y.shape[0] == d.shape[0]):
            raise DimensionMismatch("channel lengths differ")
        if self.ts <= 0:
            raise ValueError("sample period must be positive")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n_d(self) -> int:
        return self.d.shape[1]


@dataclass(frozen=True)
class Scalers:
    """Zero-mean unit-variance scaling of u and y (d is left untouched)."""

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def from_dataset(cls, data: Dataset) -> "Scalers":
        def stats(A):
            mean = A.mean(axis=0)
            std = A.std(axis=0)
            std[std == 0.0] = 1.0
            return mean, std
        um, us = stats(data.u)
        ym, ys = stats(data.y)
        return cls(um, us, ym, ys)

    def apply(self, data: Dataset) -> Dataset:
        return replace(data,
                       u=(data.u - self.u_mean) / self.u_std,
                       y=(data.y - self.y_mean) / self.y_std)

    def unscale_y(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_std + self.y_mean


def multisine(N: int, ts: float, f_lo: float, f_hi: float,
              target_std: float, rng=None) -> np.ndarray:
    """Random-phase multisine on the DFT grid of the record.

    Equal-amplitude cosines at every grid frequency k/(N*ts) inside
    [f_lo, f_hi], phases iid uniform on [0, 2pi), rescaled so the sample
    standard deviation equals target_std exactly.
    """
    if not (f_lo < f_hi <= 0.5 / ts):
        raise ValueError("need f_lo < f_hi <= Nyquist")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    freqs = np.arange(1, N // 2 + 1) / (N * ts)
    band = (freqs >= f_lo) & (freqs <= f_hi)
    if not np.any(band):
        raise EmptyBand(
            f"no grid frequency of spacing {1/(N*ts):.4g} Hz in "
            f"[{f_lo}, {f_hi}] Hz")
    fb = freqs[band]
    phases = rng.uniform(0.0, 2.0 * np.pi, fb.size)
    t = np.arange(N) * ts
    x = np.zeros(N)
    for i in range(0, fb.size, 128):  # chunked: the full outer product is huge
        x += np.cos(2.0 * np.pi * np.outer(t, fb[i:i + 128])
                    + phases[i:i + 128]).sum(axis=1)
    std = x.std()
    if std == 0.0:
        raise EmptyBand("degenerate multisine realization")
    return x * (target_std / std)


@dataclass(frozen=True)
class MsdParams:
    """Nonlinear mass-spring-damper parameters (position output).

    The stiffness has a cubic hardening term and the input gain droops with
    position, so the dynamics are affine in (x1, x1^2) or rational in x1
    alone.
    """

    ts: float = 0.1
    m: float = 1.0
    k1: float = 0.1
    k2: float = 1.0
    d1: float = 1.0

    def __post_init__(self):
        if min(self.ts, self.m, self.k1, self.k2, self.d1) <= 0:
            raise ValueError("all parameters must be positive")


def msd_step(params: MsdParams, x, u: float) -> np.ndarray:
    """One forward-Euler step of the nonlinear mass-spring-damper."""
    x1, x2 = float(x[0]), float(x[1])
    u = float(u)
    x1n = x1 + params.ts * x2
    x2n = x2 + (params.ts / params.m) * (
        u - 0.6 * x1 * u - params.k1 * x1 - params.k2 * x1 ** 3
        - params.d1 * x2)
    return np.array([x1n, x2n])


def _simulate_msd(params: MsdParams, u: np.ndarray) -> np.ndarray:
    x = np.zeros(2)
    y = np.empty(u.shape[0])
    for k in range(u.shape[0]):
        y[k] = x[0]
        x = msd_step(params, x, u[k])
    return y


_SPLIT_LENGTHS = {"train": 6000, "val": 6000, "test": 30000}
_MSD_BAND = (1.0 / 6.0, 5.0)
_MSD_INPUT_STD = 4.0
_MSD_SNR_DB = 20.6


def generate_msd_dataset(split: str, seed: int = 0,
                         params: MsdParams | None = None,
                         snr_db: float = _MSD_SNR_DB,
                         noise_var: float | None = None) -> Dataset:
    """Generate one split of the mass-spring-damper benchmark.

    Train/val records are 6000 samples, the test record 30000.  The input
    is a random-phase multisine (1/6 to 5 Hz band, standard deviation 4)
    and the position output carries iid Gaussian noise.  The noise
    variance is calibrated to the target SNR (default 20.6 dB, which puts
    the test-split noise-floor best-fit rate near 90); pass noise_var to
    pin the variance explicitly instead.  Splits use independent seed
    streams; the noiseless output is kept in the metadata.
    """
    if split not in _SPLIT_LENGTHS:
        raise ValueError(f"unknown split {split!r}; "
                         f"expected one of {sorted(_SPLIT_LENGTHS)}")
    params = params or MsdParams()
    N = _SPLIT_LENGTHS[split]
    ss = np.random.SeedSequence([seed, list(_SPLIT_LENGTHS).index(split)])
    rng_u, rng_e = [np.random.default_rng(s) for s in ss.spawn(2)]
    u = multisine(N, params.ts, *_MSD_BAND, _MSD_INPUT_STD, rng=rng_u)
    y_clean = _simulate_msd(params, u)
    var_clean = float(y_clean.var())
    sigma_e2 = (var_clean / 10.0 ** (snr_db / 10.0)
                if noise_var is None else float(noise_var))
    noise = rng_e.normal(0.0, np.sqrt(sigma_e2), N)
    y = y_clean + noise
    snr_db = 10.0 * np.log10(var_clean / sigma_e2)
    return Dataset(
        name=f"nl-msd-{split}",
        u=u[:, None], y=y[:, None], ts=params.ts,
        metadata={
            "seed": seed,
            "split": split,
            "sigma_e2": sigma_e2,
            "snr_db": snr_db,
            "y_noiseless": y_clean[:, None],
        },
    )


def bfr(y, y_hat) -> float:
    """Best fit rate in percent:
    max(1 - sum_k ||y_k - yhat_k|| / sum_k ||y_k - ybar||, 0) * 100."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    if y.shape != y_hat.shape:
        raise DimensionMismatch(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if y.shape[0] < 2:
        raise ValueError("need at least two samples")
    ybar = y.mean(axis=0)
    denom = np.linalg.norm(y - ybar, axis=1).sum()
    if denom == 0.0:
        raise DegenerateReference("reference output has zero deviation")
    num = np.linalg.norm(y - y_hat, axis=1).sum()
    return float(max(1.0 - num / denom, 0.0) * 100.0)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(data: Dataset, path) -> None:
    """Write the record with header k,u1..,d1..,y1.. plus a JSON metadata
    sidecar (<path>.meta.json); reals are written full-precision."""
    path = Path(path)
    header = (["k"] + [f"u{i+1}" for i in range(data.n_u)]
              + [f"d{i+1}" for i in range(data.n_d)]
              + [f"y{i+1}" for i in range(data.n_y)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(data.N):
            row = [str(k)]
            row += [_fmt(v) for v in data.u[k]]
            row += [_fmt(v) for v in data.d[k]]
            row += [_fmt(v) for v in data.y[k]]
            w.writerow(row)
    meta = {"name": data.name, "T_s": data.ts}
    for key in ("seed", "split", "sigma_e2", "snr_db"):
        if key in data.metadata:
            meta[key] = data.metadata[key]
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def read_csv(path) -> Dataset:
    """Read a record written by write_csv (or any file with the same
    schema); raises ParseError/SchemaError on malformed content."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        if not header or header[0] != "k":
            raise SchemaError(f"header must start with 'k', got {header[:1]}")
        n_u = sum(1 for h in header if h.startswith("u"))
        n_d = sum(1 for h in header if h.startswith("d"))
        n_y = sum(1 for h in header if h.startswith("y"))
        expected = (["k"] + [f"u{i+1}" for i in range(n_u)]
                    + [f"d{i+1}" for i in range(n_d)]
                    + [f"y{i+1}" for i in range(n_y)])
        if header != expected:
            raise SchemaError(f"unexpected header {header}")
        if n_y == 0 or n_u == 0:
            raise SchemaError("need at least one u and one y column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"line {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    if not rows:
        raise ParseError("no data rows")
    A = np.array(rows)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    ts, meta = 1.0, {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
        ts = float(meta.pop("T_s", 1.0))
    return Dataset(
        name=str(meta.pop("name", path.stem)),
        u=A[:, :n_u],
        d=A[:, n_u:n_u + n_d] if n_d else None,
        y=A[:, n_u + n_d:],
        ts=ts,
        metadata=meta,
    )
