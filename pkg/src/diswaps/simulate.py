"""Monitoring partitions and Monte Carlo paths of martingale forward prices.

Paths are generated in fixed blocks of ``BLOCK_SIZE`` paths. Each block draws
from its own Philox stream keyed by ``(seed, block index)``, so path ``i`` only
depends on ``(model, partition, seed, i)`` and never on the path count or the
number of worker threads.
"""
from __future__ import annotations

import csv
import enum
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

BLOCK_SIZE = 1024
HESTON_SUBSTEPS = 8
_TIME_TOL = 1e-12
_MAX_DEDUP_RETRIES = 100


class SimulationError(ValueError):
    pass


# --- partitions --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Partition:
    """Monitoring times ``0 = t_0 < t_1 < ... < t_N = T`` in year fractions."""

    times: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        if t.size < 2:
            raise SimulationError("a partition needs at least two times (N >= 1)")
        if t[0] != 0.0:
            raise SimulationError("partitions start at t = 0")
        if not np.all(np.diff(t) > 0):
            raise SimulationError("partition times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def N(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.times, other.times)

    __hash__ = None

    def __repr__(self):
        return f"Partition(label={self.label!r}, N={self.N}, T={self.T})"

    def indices_in(self, fine: "Partition") -> np.ndarray:
        """Positions of this partition's times inside ``fine``; raises unless nested."""
        idx = np.searchsorted(fine.times, self.times - _TIME_TOL)
        idx = np.clip(idx, 0, fine.times.size - 1)
        if not np.all(np.abs(fine.times[idx] - self.times) <= _TIME_TOL * max(1.0, self.T)):
            raise SimulationError(f"{self!r} is not contained in {fine!r}")
        return idx

    def is_subset_of(self, other: "Partition") -> bool:
        try:
            self.indices_in(other)
        except SimulationError:
            return False
        return True

    def union(self, *others: "Partition", label: str = "union") -> "Partition":
        parts = (self,) + others
        T = self.T
        for p in others:
            if abs(p.T - T) > _TIME_TOL * max(1.0, T):
                raise SimulationError("cannot merge partitions with different maturities")
        t = np.sort(np.concatenate([p.times for p in parts]))
        keep = np.concatenate([[True], np.diff(t) > _TIME_TOL * max(1.0, T)])
        t = t[keep]
        t[-1] = T
        return Partition(t, label)

    def refine(self, factor: int, label: str | None = None) -> "Partition":
        """Split every interval into ``factor`` equal pieces."""
        if factor < 1:
            raise SimulationError("refinement factor must be >= 1")
        t = self.times
        frac = np.arange(factor) / factor
        fine = (t[:-1, None] + np.diff(t)[:, None] * frac[None, :]).reshape(-1)
        fine = np.append(fine, t[-1])
        return Partition(fine, label or f"{self.label}x{factor}")


def make_partition(kind: str, N: int, T: float = 1.0, seed: int | None = None,
                   base: Partition | None = None) -> Partition:
    """Build a regular, irregular (seeded uniform draws) or refined partition.

    ``refine`` returns a partition with ``N`` steps containing every point of
    ``base``: each base interval is split evenly when ``N`` is a multiple of
    ``base.N``, otherwise the regular ``N`` grid is merged with ``base``.
    """
    if N < 1:
        raise SimulationError("N must be >= 1")
    if T <= 0:
        raise SimulationError("T must be positive")
    if kind == "regular":
        return Partition(np.arange(N + 1) * T / N, "regular" if N != 1 else "trivial")
    if kind == "irregular":
        if seed is None:
            raise SimulationError("irregular partitions need a seed")
        rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, 0x1BEEF]))
        for _ in range(_MAX_DEDUP_RETRIES):
            inner = np.unique(rng.uniform(0.0, T, size=N - 1))
            inner = inner[(inner > 0) & (inner < T)]
            if inner.size == N - 1 and (inner.size < 2 or np.min(np.diff(inner)) > _TIME_TOL * T):
                return Partition(np.concatenate([[0.0], inner, [T]]), f"irregular-seed{seed}")
        raise SimulationError("could not draw distinct interior points")
    if kind == "refine":
        if base is None:
            raise SimulationError("refine needs a base partition")
        if abs(base.T - T) > _TIME_TOL * max(1.0, T):
            T = base.T
        if N % base.N == 0:
            return base.refine(N // base.N, label=f"refine{N}")
        return base.union(make_partition("regular", N, T), label=f"refine{N}")
    raise SimulationError(f"unknown partition kind {kind!r}")


def parse_partition(spec: str, T: float = 1.0) -> Partition:
    """Parse ``"252"``, ``"daily"``, ``"weekly"``, ``"monthly"`` or ``"irregular:<seed>[:<N>]"``."""
    spec = spec.strip()
    named = {"daily": 252, "weekly": 52, "monthly": 12, "trivial": 1}
    if spec in named:
        p = make_partition("regular", round(named[spec] * T) or 1, T)
        return Partition(p.times, spec)
    if spec.startswith("irregular"):
        parts = spec.split(":")
        seed = int(parts[1]) if len(parts) > 1 else 0
        n = int(parts[2]) if len(parts) > 2 else 100
        return make_partition("irregular", n, T, seed=seed)
    try:
        n = int(spec)
    except ValueError:
        raise SimulationError(f"cannot parse partition {spec!r}") from None
    p = make_partition("regular", n, T)
    return Partition(p.times, f"N{n}")


# --- models ------------------------------------------------------------------


class ModelKind(str, enum.Enum):
    GBM = "GBM"
    MertonJump = "MertonJump"
    Heston = "Heston"


@dataclass(frozen=True)
class JumpParams:
    intensity: float
    mean_log_jump: float
    sd_log_jump: float

    @property
    def kappa_bar(self) -> float:
        """Mean relative jump size ``E[exp(J)] - 1``."""
        return math.expm1(self.mean_log_jump + 0.5 * self.sd_log_jump**2)


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    xi: float
    rho: float
    v0: float


@dataclass(frozen=True)
class ModelSpec:
    """Forward price dynamics; ``drift = 0`` is the pricing measure."""

    kind: ModelKind
    F0: float = 100.0
    vol: float = 0.2
    drift: float = 0.0
    jump: JumpParams | None = None
    heston: HestonParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not (self.F0 > 0 and math.isfinite(self.F0)):
            raise SimulationError("F0 must be positive")
        if not (self.vol > 0 and math.isfinite(self.vol)):
            raise SimulationError("vol must be positive")
        if not math.isfinite(self.drift):
            raise SimulationError("drift must be finite")
        if self.kind is ModelKind.MertonJump:
            j = self.jump
            if j is None:
                raise SimulationError("MertonJump needs jump parameters")
            if j.intensity < 0 or j.sd_log_jump < 0:
                raise SimulationError("jump intensity and sd must be non-negative")
        if self.kind is ModelKind.Heston:
            h = self.heston
            if h is None:
                raise SimulationError("Heston needs heston parameters")
            if min(h.kappa, h.theta, h.xi, h.v0) <= 0 or not -1 <= h.rho <= 1:
                raise SimulationError("Heston parameters out of domain")

    @property
    def label(self) -> str:
        return self.kind.value

    def risk_neutral(self) -> "ModelSpec":
        return ModelSpec(self.kind, self.F0, self.vol, 0.0, self.jump, self.heston)

    @property
    def is_levy(self) -> bool:
        return self.kind in (ModelKind.GBM, ModelKind.MertonJump)

    def log_cumulants(self, tau, n_max: int, tilt: float = 0.0) -> list:
        """Cumulants 1..n_max of ``ln F_{t+tau} - ln F_t`` for the Levy models.

        ``tilt = 1`` gives the cumulants under the share measure, i.e. of the
        law weighted by ``F_{t+tau} / F_t``; expectations of ``F_T g(x_T)``
        follow from it.
        """
        if not self.is_levy:
            raise SimulationError(f"{self.kind.value} has no closed-form log cumulants")
        tau = np.asarray(tau, dtype=float)
        s2 = self.vol**2
        k = [None] * (n_max + 1)
        k[1] = tau * (self.drift + s2 * (tilt - 0.5))
        if n_max >= 2:
            k[2] = tau * s2
        for n in range(3, n_max + 1):
            k[n] = tau * 0.0
        j = self.jump if self.kind is ModelKind.MertonJump else None
        if j is not None and j.intensity > 0:
            m, sd = j.mean_log_jump, j.sd_log_jump
            mgf = math.exp(tilt * m + 0.5 * tilt**2 * sd**2)
            tilted = _normal_raw_moments(m + tilt * sd**2, sd, n_max)
            k[1] = k[1] + tau * j.intensity * (mgf * tilted[1] - j.kappa_bar)
            for n in range(2, n_max + 1):
                k[n] = k[n] + tau * j.intensity * mgf * tilted[n]
        return k

    def log_mgf(self, tau, u: float):
        """``log E[exp(u (ln F_{t+tau} - ln F_t))]`` for the Levy models."""
        if not self.is_levy:
            raise SimulationError(f"{self.kind.value} has no closed-form moment generating function")
        tau = np.asarray(tau, dtype=float)
        s2 = self.vol**2
        out = tau * (u * self.drift + 0.5 * s2 * (u * u - u))
        j = self.jump if self.kind is ModelKind.MertonJump else None
        if j is not None and j.intensity > 0:
            mgf = math.exp(u * j.mean_log_jump + 0.5 * u * u * j.sd_log_jump**2)
            out = out + tau * j.intensity * (mgf - 1.0 - u * j.kappa_bar)
        return out


def _normal_raw_moments(mu: float, sd: float, n_max: int) -> list[float]:
    m = [1.0, mu]
    for n in range(2, n_max + 1):
        m.append(mu * m[n - 1] + (n - 1) * sd * sd * m[n - 2])
    return m[: n_max + 1]


def raw_moments_from_cumulants(k: list, n_max: int) -> list:
    """Raw moments ``E[Y^n]`` for ``n <= n_max`` from cumulants ``k[1..n_max]``."""
    mu = [np.ones_like(np.asarray(k[1], dtype=float))]
    for n in range(1, n_max + 1):
        acc = 0.0
        for j in range(1, n + 1):
            acc = acc + math.comb(n - 1, j - 1) * k[j] * mu[n - j]
        mu.append(acc)
    return mu


# --- path panels -------------------------------------------------------------


@dataclass
class PathPanel:
    """Simulated forward paths on a partition; arrays are indexed ``[path, time]``.

    ``aux`` holds derived component paths keyed by label (power log contracts,
    option prices) plus the Heston variance under ``"_v"``.
    """

    partition: Partition
    model: ModelSpec
    F: np.ndarray
    x: np.ndarray
    seed: int
    path_offset: int = 0
    aux: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.F.shape[0]

    def restrict(self, coarse: Partition) -> "PathPanel":
        """The same paths observed on a sub-partition."""
        idx = coarse.indices_in(self.partition)
        return PathPanel(coarse, self.model, self.F[:, idx], self.x[:, idx], self.seed,
                         self.path_offset, {k: v[:, idx] for k, v in self.aux.items()})

    def component(self, label: str) -> np.ndarray:
        if label == "F":
            return self.F
        return self.aux[label]

    def components(self, labels: Sequence[str]) -> np.ndarray:
        """Stack component paths into ``[path, time, component]``."""
        return np.stack([self.component(lab) for lab in labels], axis=-1)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, block]))


def _simulate_block(model: ModelSpec, times: np.ndarray, seed: int, block: int):
    rng = _block_rng(seed, block)
    dt = np.diff(times)
    B = BLOCK_SIZE
    n = dt.size
    x0 = math.log(model.F0)
    v = None
    if model.kind is ModelKind.Heston:
        dx, v = _heston_increments(model, dt, rng)
    else:
        z = rng.standard_normal((B, n))
        s = model.vol
        drift = model.drift - 0.5 * s * s
        if model.kind is ModelKind.MertonJump and model.jump.intensity > 0:
            j = model.jump
            drift -= j.intensity * j.kappa_bar
            counts = rng.poisson(j.intensity * dt, size=(B, n))
            zj = rng.standard_normal((B, n))
            jumps = counts * j.mean_log_jump + np.sqrt(counts) * j.sd_log_jump * zj
        else:
            jumps = 0.0
        dx = drift * dt + s * np.sqrt(dt) * z + jumps
    x = np.empty((B, n + 1))
    x[:, 0] = x0
    np.cumsum(dx, axis=1, out=x[:, 1:])
    x[:, 1:] += x0
    return x, v


def _heston_increments(model: ModelSpec, dt: np.ndarray, rng: np.random.Generator):
    h = model.heston
    B = BLOCK_SIZE
    n = dt.size
    m = HESTON_SUBSTEPS
    z1 = rng.standard_normal((B, n, m))
    z2 = rng.standard_normal((B, n, m))
    zv = h.rho * z1 + math.sqrt(1.0 - h.rho**2) * z2
    v = np.full(B, h.v0)
    dx = np.zeros((B, n))
    vpath = np.empty((B, n + 1))
    vpath[:, 0] = h.v0
    for i in range(n):
        ds = dt[i] / m
        sq = math.sqrt(ds)
        for k in range(m):
            vp = np.maximum(v, 0.0)
            sv = np.sqrt(vp)
            dx[:, i] += (model.drift - 0.5 * vp) * ds + sv * sq * z1[:, i, k]
            v = v + h.kappa * (h.theta - vp) * ds + h.xi * sv * sq * zv[:, i, k]
        vpath[:, i + 1] = v
    return dx, vpath


def _n_blocks(n_paths: int) -> int:
    return -(-n_paths // BLOCK_SIZE)


def simulate_block(model: ModelSpec, partition: Partition, n_paths: int, seed: int, block: int) -> PathPanel:
    """Paths ``[block*BLOCK_SIZE, min((block+1)*BLOCK_SIZE, n_paths))`` as a panel."""
    start = block * BLOCK_SIZE
    stop = min(start + BLOCK_SIZE, n_paths)
    x, v = _simulate_block(model, partition.times, seed, block)
    x = x[: stop - start]
    aux = {}
    if v is not None:
        aux["_v"] = v[: stop - start]
    return PathPanel(partition, model, np.exp(x), x, seed, start, aux)


def map_blocks(fn: Callable[[PathPanel], object], model: ModelSpec, partition: Partition,
               n_paths: int, seed: int, threads: int | None = None) -> list:
    """Simulate ``n_paths`` block by block and apply ``fn`` to each block.

    Results come back in block order whatever ``threads`` is.
    """
    if n_paths < 1:
        raise SimulationError("n_paths must be >= 1")

    def work(b):
        return fn(simulate_block(model, partition, n_paths, seed, b))

    blocks = range(_n_blocks(n_paths))
    if threads is None or threads <= 1:
        return [work(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(work, blocks))


def simulate_paths(model: ModelSpec, partition: Partition, n_paths: int, seed: int,
                   threads: int | None = None) -> PathPanel:
    """Simulate a full panel of ``n_paths`` paths on ``partition``."""
    parts = map_blocks(lambda p: p, model, partition, n_paths, seed, threads)
    aux = {}
    for key in parts[0].aux:
        aux[key] = np.concatenate([p.aux[key] for p in parts])
    return PathPanel(partition, model, np.concatenate([p.F for p in parts]),
                     np.concatenate([p.x for p in parts]), seed, 0, aux)


# --- export ------------------------------------------------------------------

PANEL_MAGIC = b"DIPANEL\x00"
PANEL_VERSION = 1


def _panel_columns(panel: PathPanel) -> list[tuple[str, np.ndarray]]:
    cols = [("F", panel.F), ("x", panel.x)]
    cols += [(k, v) for k, v in sorted(panel.aux.items())]
    return cols


def write_panel_csv(panel: PathPanel, path: str | Path) -> None:
    """Long-format CSV with columns ``path, time, component, value``."""
    times = panel.partition.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time", "component", "value"])
        for name, arr in _panel_columns(panel):
            for p in range(arr.shape[0]):
                pid = panel.path_offset + p
                for t, val in zip(times, arr[p]):
                    w.writerow([pid, repr(float(t)), name, repr(float(val))])


def write_panel_binary(panel: PathPanel, path: str | Path) -> None:
    """Binary panel layout, all integers and floats little-endian.

    ``magic[8] = "DIPANEL\\0"``, ``u32 version``, ``u64 n_paths``, ``u64 n_times``,
    ``u64 n_components``, ``u64 seed``, ``f64 times[n_times]``, then per component
    ``u32 name_len`` + UTF-8 name, then the data as ``f64[n_components][n_paths][n_times]``.
    """
    cols = _panel_columns(panel)
    times = panel.partition.times
    with open(path, "wb") as fh:
        fh.write(PANEL_MAGIC)
        fh.write(struct.pack("<IQQQQ", PANEL_VERSION, panel.n_paths, times.size, len(cols),
                             panel.seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(times.astype("<f8").tobytes())
        for name, _ in cols:
            b = name.encode()
            fh.write(struct.pack("<I", len(b)) + b)
        for _, arr in cols:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_panel_binary(path: str | Path) -> dict:
    """Read a binary panel back as ``{"seed", "times", "components": {name: array}}``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != PANEL_MAGIC:
        raise SimulationError("not a panel file")
    version, n_paths, n_times, n_comp, seed = struct.unpack_from("<IQQQQ", data, 8)
    if version != PANEL_VERSION:
        raise SimulationError(f"unsupported panel version {version}")
    off = 8 + struct.calcsize("<IQQQQ")
    times = np.frombuffer(data, "<f8", n_times, off)
    off += 8 * n_times
    names = []
    for _ in range(n_comp):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        names.append(data[off:off + ln].decode())
        off += ln
    comps = {}
    size = n_paths * n_times
    for name in names:
        comps[name] = np.frombuffer(data, "<f8", size, off).reshape(n_paths, n_times)
        off += 8 * size
    return {"seed": seed, "times": times, "components": comps}


def iter_partitions(specs: Iterable[str], T: float) -> list[Partition]:
    return [parse_partition(s, T) for s in specs]
