"""Monte Carlo and PDE checks of discretisation invariance."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hedging import decompose, panel_snapshots
from .payoffs import (
    ClassicPayoff,
    ClassicPayoffKind,
    DiPayoff,
    MomentShorthand,
    PayoffError,
    evaluate,
    realised_leg,
)
from .replication import attach_components, conditional_log_moments
from .simulate import ModelKind, ModelSpec, Partition, PathPanel, map_blocks
from .swaps import StateError, fair_value, state_from_model

DEFAULT_Z = 4.0
DEFAULT_FINE_FACTOR = 64
FD_STEP = 1e-4
LEMMA1_TOL = 1e-12


class VerifyError(ValueError):
    pass


def payoff_label(payoff) -> str:
    name = getattr(payoff, "name", "") or "payoff"
    return name


def resolve_payoff(payoff, model: ModelSpec, T: float):
    """Fill in a moment shorthand's ``X0`` from the model's log contract at inception."""
    if isinstance(payoff, MomentShorthand):
        X0 = float(conditional_log_moments(model, math.log(model.F0), T, 1)[1])
        return payoff.resolve(X0)
    return payoff


# --- realised legs on panels ------------------------------------------------------


def leg_inputs(payoff, panel: PathPanel):
    """Component levels and logs of ``panel`` in the layout :func:`realised_leg` expects."""
    if isinstance(payoff, ClassicPayoff):
        if payoff.on == "F":
            return panel.F, panel.x
        attach_components(panel, [payoff.on])
        lv = panel.component(payoff.on)
        return lv, np.log(lv)
    attach_components(panel, payoff.labels)
    levels = panel.components(payoff.labels)
    logs = None
    if payoff.uses_logs:
        used = (payoff.beta != 0) | (payoff.gamma != 0)
        logs = np.zeros_like(levels)
        for j, lab in enumerate(payoff.labels):
            if not used[j]:
                continue
            if lab == "F":
                logs[..., j] = panel.x
            else:
                if np.any(levels[..., j] <= 0):
                    raise PayoffError(f"component {lab} is not positive, so its log is undefined")
                logs[..., j] = np.log(levels[..., j])
    return levels, logs


def _take_time(a, idx, classic):
    if a is None:
        return None
    return a[:, idx] if classic else a[:, idx, :]


def partition_legs(payoff, panel: PathPanel, partitions: Sequence[Partition]) -> list[np.ndarray]:
    """Realised legs of each path on each sub-partition of the panel's partition."""
    levels, logs = leg_inputs(payoff, panel)
    classic = isinstance(payoff, ClassicPayoff)
    out = []
    for p in partitions:
        idx = p.indices_in(panel.partition)
        out.append(realised_leg(payoff, _take_time(levels, idx, classic), _take_time(logs, idx, classic)))
    return out


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    return RunningStats.of(a).mean_se()


@dataclass
class RunningStats:
    """Count, mean and centred sum of squares, merged block by block in a fixed order."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, a) -> "RunningStats":
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size == 0:
            return cls()
        m = float(np.mean(a))
        return cls(a.size, m, float(np.sum((a - m) ** 2)))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else float("nan")

    def mean_se(self) -> tuple[float, float]:
        se = math.sqrt(self.variance / self.n) if self.n > 1 else float("inf")
        return self.mean, se


def _merge_all(stats) -> RunningStats:
    out = RunningStats()
    for s in stats:
        out = out.merge(s)
    return out


def _z(mean: float, se: float) -> float:
    if se > 0:
        return mean / se
    return 0.0 if mean == 0 else math.copysign(math.inf, mean)


# --- rate estimates ---------------------------------------------------------------------


@dataclass
class RateEstimate:
    mean: float
    se: float
    n_paths: int
    partition: str = ""
    variance: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def simulate_legs(payoff, model: ModelSpec, partitions: Sequence[Partition], n_paths: int, seed: int,
                  threads: int | None = None) -> list[np.ndarray]:
    """Paired realised legs on several partitions from one simulation on their union."""
    if not partitions:
        raise VerifyError("need at least one partition")
    union = partitions[0].union(*partitions[1:]) if len(partitions) > 1 else partitions[0]
    blocks = map_blocks(lambda pan: partition_legs(payoff, pan, partitions), model, union, n_paths, seed, threads)
    return [np.concatenate([b[i] for b in blocks]) for i in range(len(partitions))]


def estimate_rate(payoff, model: ModelSpec, partition: Partition, n_paths: int, seed: int,
                  threads: int | None = None) -> RateEstimate:
    """Sample mean and standard error of the realised leg on ``partition``."""
    payoff = resolve_payoff(payoff, model, partition.T)
    blocks = map_blocks(lambda pan: RunningStats.of(partition_legs(payoff, pan, [partition])[0]),
                        model, partition, n_paths, seed, threads)
    st = _merge_all(blocks)
    m, se = st.mean_se()
    return RateEstimate(m, se, st.n, partition.label, st.variance)


# --- aggregation property ------------------------------------------------------------


@dataclass
class PartitionEstimate:
    label: str
    N: int
    mean: float
    se: float
    diff_mean: float
    diff_se: float
    z: float
    n_paths: int


@dataclass
class ApVerdict:
    payoff: str
    model: str
    estimates: list
    reference: dict
    max_abs_z: float
    z_threshold: float
    passed: bool
    lemma1_max_diff: float | None = None
    lemma1_applicable: bool = False
    fair_value: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimates"] = [asdict(e) if not isinstance(e, dict) else e for e in self.estimates]
        return d

    def table(self) -> str:
        rows = [f"{'partition':<22}{'N':>6}{'mean':>14}{'se':>12}{'diff':>14}{'z':>9}"]
        for e in self.estimates:
            rows.append(f"{e.label:<22}{e.N:>6}{e.mean:>14.6e}{e.se:>12.3e}{e.diff_mean:>14.3e}{e.z:>9.2f}")
        return "\n".join(rows)


def lemma1_diff(payoff: DiPayoff, levels: np.ndarray) -> float | None:
    """Largest relative gap between ``phi`` and its form in log levels, ``phi*(x_prev, x_next)``.

    ``phi*`` rebuilds ``F_hat = exp(x_prev) (exp(x_hat) - 1)``. ``None`` when some
    component is not strictly positive.
    """
    if not isinstance(payoff, DiPayoff) or np.any(levels <= 0):
        return None
    x = np.log(levels)
    prev, nxt = x[..., :-1, :], x[..., 1:, :]
    x_hat = nxt - prev
    phi_star = evaluate(payoff, np.exp(prev) * np.expm1(x_hat), x_hat)
    phi = evaluate(payoff, np.diff(levels, axis=-2), x_hat)
    scale = np.maximum(1.0, np.abs(phi))
    return float(np.max(np.abs(phi_star - phi) / scale))


def ap_check(payoff, model: ModelSpec, partitions: Sequence[Partition], n_paths: int, seed: int,
             z_threshold: float = DEFAULT_Z, threads: int | None = None) -> ApVerdict:
    """Paired test that every partition's realised-leg mean equals the one-step mean."""
    if z_threshold <= 0:
        raise VerifyError("z_threshold must be positive")
    if len(partitions) < 2:
        raise VerifyError("need at least two partitions")
    T = partitions[0].T
    if any(abs(p.T - T) > 1e-12 * max(1.0, T) for p in partitions):
        raise VerifyError("all partitions must share the same maturity")
    trivial = [p for p in partitions if p.N == 1]
    if not trivial:
        raise VerifyError("the partitions must include the trivial partition {0, T}")
    payoff = resolve_payoff(payoff, model, T)
    parts = [trivial[0]] + [p for p in partitions if p is not trivial[0]]
    union = parts[0].union(*parts[1:])

    def work(pan):
        legs = partition_legs(payoff, pan, parts)
        lem = None
        if isinstance(payoff, DiPayoff):
            lem = lemma1_diff(payoff, leg_inputs(payoff, pan)[0])
        stats = [RunningStats.of(leg) for leg in legs]
        diffs = [RunningStats.of(leg - legs[0]) for leg in legs[1:]]
        return stats, diffs, lem

    blocks = map_blocks(work, model, union, n_paths, seed, threads)
    stats = [_merge_all(b[0][i] for b in blocks) for i in range(len(parts))]
    diffs = [_merge_all(b[1][i] for b in blocks) for i in range(len(parts) - 1)]
    lems = [b[2] for b in blocks]
    ref_mean, ref_se = stats[0].mean_se()
    estimates = []
    for p, st, dst in zip(parts[1:], stats[1:], diffs):
        m, se = st.mean_se()
        dm, dse = dst.mean_se()
        if dst.m2 == 0.0:
            dse = 0.0
        estimates.append(PartitionEstimate(p.label, p.N, m, se, dm, dse, _z(dm, dse), st.n))
    max_z = max(abs(e.z) for e in estimates)
    applicable = bool(lems) and all(v is not None for v in lems)
    lem_max = max(lems) if applicable else None
    passed = max_z < z_threshold and (lem_max is None or lem_max <= LEMMA1_TOL)
    fv = None
    if isinstance(payoff, DiPayoff):
        try:
            fv = fair_value(payoff, state_from_model(model.risk_neutral(), payoff.labels, T))
        except (StateError, PayoffError, ValueError):
            fv = None
    return ApVerdict(
        payoff_label(payoff), model.label, estimates,
        {"label": parts[0].label, "mean": ref_mean, "se": ref_se, "n_paths": stats[0].n},
        float(max_z), float(z_threshold), bool(passed), lem_max, applicable, fv,
    )


@dataclass
class PairedEstimate:
    mean: float
    se: float
    n_paths: int
    exact_zero: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def frequency_check(payoff, model: ModelSpec, fine: Partition, coarse: Partition, n_paths: int, seed: int,
                    threads: int | None = None) -> PairedEstimate:
    """Floating-for-floating difference ``leg(fine) - leg(coarse)`` on nested partitions."""
    if not coarse.is_subset_of(fine):
        raise VerifyError("the coarse partition must be nested in the fine one")
    payoff = resolve_payoff(payoff, model, fine.T)
    def work(pan):
        lf, lc = partition_legs(payoff, pan, [fine, coarse])
        d = lf - lc
        return RunningStats.of(d), bool(np.all(d == 0))

    blocks = map_blocks(work, model, fine.union(coarse), n_paths, seed, threads)
    st = _merge_all(b[0] for b in blocks)
    m, se = st.mean_se()
    exact = all(b[1] for b in blocks)
    return PairedEstimate(m, 0.0 if exact else se, st.n, exact)


# --- discrete monitoring error --------------------------------------------------------


@dataclass
class DeltaEstimate:
    mean: float
    se: float
    n_paths: int
    N: int
    fine_factor: int

    def to_dict(self) -> dict:
        return asdict(self)


def delta_n(payoff, model: ModelSpec, partition: Partition, n_paths: int, seed: int,
            fine_factor: int = DEFAULT_FINE_FACTOR, threads: int | None = None) -> DeltaEstimate:
    """Paired estimate of the realised leg on ``partition`` minus its ``fine_factor`` refinement.

    The refinement stands in for the continuously monitored variation; its own
    monitoring error remains in the estimate.
    """
    if fine_factor < 2:
        raise VerifyError("fine_factor must be at least 2")
    payoff = resolve_payoff(payoff, model, partition.T)
    fine = partition.refine(fine_factor)
    def work(pan):
        lc, lf = partition_legs(payoff, pan, [partition, fine])
        return RunningStats.of(lc - lf)

    st = _merge_all(map_blocks(work, model, fine, n_paths, seed, threads))
    m, se = st.mean_se()
    if st.m2 == 0.0:
        se = 0.0
    return DeltaEstimate(m, se, st.n, partition.N, fine_factor)


def squared_return_delta_oracle(sigma: float, T: float, N: int, fine_N: int | None = None) -> float:
    """Expected sum of squared GBM log returns on ``N`` steps minus that on ``fine_N`` steps."""
    base = sigma**4 * T**2 / 4.0
    return base / N - (base / fine_N if fine_N else 0.0)


# --- premium harness -------------------------------------------------------------------


@dataclass
class PremiumReport:
    realised_mean: float
    realised_se: float
    realised_variance: float
    fair_value: float
    fair_value_source: str
    premium: float
    premium_se: float
    n_paths: int
    oracle_premium: float | None = None
    oracle_variance: float | None = None
    exact_variance: float | None = None
    decomposition: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def premium_study(payoff, model: ModelSpec, partition: Partition, n_paths: int, seed: int,
                  threads: int | None = None) -> PremiumReport:
    """Physical-measure mean of the realised leg minus its risk-neutral fair value.

    Both measures share random numbers (same seed), so the premium of a classic
    pay-off is estimated from paired differences. DI pay-offs use the exact
    fair value and also report the mean realised/implied split per time.
    """
    T = partition.T
    rn = model.risk_neutral()
    payoff = resolve_payoff(payoff, rn, T)
    is_di = isinstance(payoff, DiPayoff)

    def work(pan):
        (leg,) = partition_legs(payoff, pan, [partition])
        dec = None
        if is_di and not (model.kind is ModelKind.Heston and np.any(payoff.omega != 0)):
            s = panel_snapshots(rn, payoff.labels, pan.x, partition.times, T, pan.aux.get("_v"))
            parts = decompose(payoff, s.at(slice(None), slice(None, -1)), s.at(slice(None), slice(1, None)))
            dec = (np.sum(parts["realised"], axis=0), np.sum(parts["implied"], axis=0))
        return leg, dec

    phys = map_blocks(work, model, partition, n_paths, seed, threads)
    leg = np.concatenate([b[0] for b in phys])
    m, se = _mean_se(leg)
    var = float(np.var(leg, ddof=1))
    fv = None
    source = "analytic"
    if is_di:
        try:
            fv = fair_value(payoff, state_from_model(rn, payoff.labels, T))
        except (StateError, PayoffError, ValueError):
            fv = None
    if fv is not None:
        prem, prem_se = m - fv, se
    else:
        source = "monte-carlo (common random numbers)"
        q = map_blocks(lambda pan: partition_legs(payoff, pan, [partition])[0], rn, partition, n_paths, seed, threads)
        rn_leg = np.concatenate(q)
        fv = float(np.mean(rn_leg))
        prem, prem_se = _mean_se(leg - rn_leg)
    decomposition = {}
    if phys[0][1] is not None:
        real = sum(b[1][0] for b in phys) / leg.size
        imp = sum(b[1][1] for b in phys) / leg.size
        decomposition = {
            "times": partition.times.tolist(),
            "realised": np.concatenate([[0.0], np.cumsum(real)]).tolist(),
            "implied": np.concatenate([[0.0], np.cumsum(imp)]).tolist(),
        }
    rep = PremiumReport(m, se, var, float(fv), source, float(prem), float(prem_se), leg.size,
                        decomposition=decomposition)
    if (isinstance(payoff, ClassicPayoff) and payoff.kind is ClassicPayoffKind.SquaredLogReturn
            and model.kind is ModelKind.GBM):
        dt = np.diff(partition.times)
        mu, s = model.drift, model.vol
        N = partition.N
        rep.oracle_premium = float(mu * (mu - s * s) * np.sum(dt * dt))
        rep.oracle_variance = float(2 * s**4 * T**2 / N + 4 * mu**2 * s**2 * T**3 / N**2)
        mdt = (mu - 0.5 * s * s) * dt
        rep.exact_variance = float(np.sum(2 * (s * s * dt) ** 2 + 4 * mdt**2 * s * s * dt))
    return rep


# --- PDE residual --------------------------------------------------------------------------


@dataclass(frozen=True)
class ZMap:
    """The state map ``z = (F, ln F)`` over ``d`` components.

    ``Delta(F)`` stacks the first derivatives ``(I, diag(F)^-1)'`` and
    ``Gamma(F)`` the second derivatives: ``-F_k^-2`` on the ``(x_k, k, k)`` entry.
    """

    labels: tuple

    @property
    def d(self) -> int:
        return len(self.labels)

    def Delta(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return np.vstack([np.eye(self.d), np.diag(1.0 / F)])

    def Gamma(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        G = np.zeros((2 * self.d, self.d, self.d))
        for k in range(self.d):
            inv = 1.0 / F[k]
            G[self.d + k, k, k] = -(inv * inv)
        return G


@dataclass(frozen=True)
class Candidate:
    """A pay-off candidate ``fn(F_hat, x_hat)`` on vectors of length ``d``.

    ``djac`` and ``dhess``, when given, return ``J(z_hat) - J(0)`` (length ``2d``)
    and ``H(z_hat) - H(0)`` (``2d x 2d``) with ``z_hat = (F_hat, x_hat)``.
    """

    fn: Callable
    d: int
    djac: Callable | None = None
    dhess: Callable | None = None
    name: str = "candidate"

    @property
    def analytic(self) -> bool:
        return self.djac is not None and self.dhess is not None


def _di_candidate(p: DiPayoff) -> Candidate:
    d = p.dim

    def fn(F_hat, x_hat):
        return evaluate(p, F_hat, x_hat if p.uses_logs else None)

    def djac(F_hat, x_hat):
        e = p.beta * np.expm1(x_hat)
        return np.concatenate([2.0 * p.omega @ F_hat, e])

    def dhess(F_hat, x_hat):
        H = np.zeros((2 * d, 2 * d))
        H[d:, d:] = np.diag(p.beta * np.expm1(x_hat))
        return H

    return Candidate(fn, d, djac, dhess, p.name or "di")


_CLASSIC_DERIVS = {
    ClassicPayoffKind.SquaredLogReturn: (lambda x: 2.0 * x, lambda x: 0.0 * x),
    ClassicPayoffKind.LogVariance: (lambda x: 2.0 * np.expm1(x), lambda x: 2.0 * np.expm1(x)),
    ClassicPayoffKind.EntropyVariance: (lambda x: 2.0 * x * np.exp(x), lambda x: 2.0 * ((x + 1.0) * np.exp(x) - 1.0)),
    ClassicPayoffKind.Tau: (lambda x: 6.0 * (x * np.exp(x) - np.expm1(x)), lambda x: 6.0 * x * np.exp(x)),
}


def _classic_candidate(p: ClassicPayoff) -> Candidate:
    if p.kind not in _CLASSIC_DERIVS:
        raise VerifyError(f"{p.kind.value} is not a function of (F_hat, x_hat) alone")
    dj, dh = _CLASSIC_DERIVS[p.kind]

    def fn(F_hat, x_hat):
        return float(p(np.asarray(x_hat, dtype=float)[0]))

    def djac(F_hat, x_hat):
        return np.array([0.0, dj(float(x_hat[0]))])

    def dhess(F_hat, x_hat):
        H = np.zeros((2, 2))
        H[1, 1] = dh(float(x_hat[0]))
        return H

    return Candidate(fn, 1, djac, dhess, p.name)


def as_candidate(obj, d: int | None = None) -> Candidate:
    if isinstance(obj, Candidate):
        return obj
    if isinstance(obj, DiPayoff):
        return _di_candidate(obj)
    if isinstance(obj, ClassicPayoff):
        return _classic_candidate(obj)
    if callable(obj):
        if d is None:
            raise VerifyError("a plain function needs its dimension d")
        return Candidate(obj, d)
    raise VerifyError(f"cannot use {type(obj).__name__} as a candidate")


def _fd_derivs(fn: Callable, z: np.ndarray, steps: np.ndarray, d: int):
    """Central-difference gradient and Hessian of ``fn`` at ``z = (F_hat, x_hat)``."""
    n = z.size

    def f(v):
        return float(fn(v[:d], v[d:]))

    f0 = f(z)
    J = np.empty(n)
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = steps[i]
        fp, fm = f(z + e), f(z - e)
        J[i] = (fp - fm) / (2 * steps[i])
        H[i, i] = (fp - 2 * f0 + fm) / steps[i] ** 2
        for j in range(i):
            e2 = np.zeros(n)
            e2[j] = steps[j]
            val = (f(z + e + e2) - f(z + e - e2) - f(z - e + e2) + f(z - e - e2)) / (4 * steps[i] * steps[j])
            H[i, j] = H[j, i] = val
    return J, H


def _residual(dJ: np.ndarray, dH: np.ndarray, F: np.ndarray, d: int) -> np.ndarray:
    """``[J(z)-J(0)]' Gamma + Delta' [H(z)-H(0)] Delta`` for ``z = (F, ln F)``.

    Written out block by block so that cancelling terms are formed with the same
    floating-point operations.
    """
    inv = 1.0 / F
    dJx = dJ[d:]
    HFF, HFx, HxF, Hxx = dH[:d, :d], dH[:d, d:], dH[d:, :d], dH[d:, d:]
    R = HFF + HFx * inv[None, :] + HxF * inv[:, None] + (Hxx * inv[:, None]) * inv[None, :]
    R[np.diag_indices(d)] -= (dJx * inv) * inv
    return R


@dataclass
class ResidualReport:
    points: list
    residuals: list
    max_frobenius: float
    mode: str
    h: float | None = None
    candidate: str = ""

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "mode": self.mode,
            "h": self.h,
            "max_frobenius": self.max_frobenius,
            "points": [{"z_hat": list(map(float, z)), "F": list(map(float, F))} for z, F in self.points],
            "residuals": [np.asarray(r).tolist() for r in self.residuals],
        }


def pde_residual(candidate, z_map: ZMap | None, points: Sequence, mode: str = "auto", h: float = FD_STEP) -> ResidualReport:
    """Residual of the invariance PDE system at each ``(z_hat, F)`` point.

    ``z_hat`` concatenates ``(F_hat, x_hat)``. ``mode`` is ``"analytic"``,
    ``"fd"`` or ``"auto"`` (analytic when derivatives are known).
    """
    cand = as_candidate(candidate, z_map.d if z_map is not None else None)
    d = cand.d
    if z_map is not None and z_map.d != d:
        raise VerifyError("z_map dimension does not match the candidate")
    if mode == "auto":
        mode = "analytic" if cand.analytic else "fd"
    if mode == "analytic" and not cand.analytic:
        raise VerifyError("analytic mode needs candidate derivatives")
    if mode not in ("analytic", "fd"):
        raise VerifyError(f"unknown mode {mode!r}")
    if mode == "fd" and not h > 0:
        raise VerifyError("finite-difference step must be positive")
    res, pts = [], []
    for z_hat, F in points:
        z_hat = np.asarray(z_hat, dtype=float).reshape(-1)
        F = np.asarray(F, dtype=float).reshape(-1)
        if z_hat.size != 2 * d or F.size != d:
            raise VerifyError("point dimensions do not match the candidate")
        if np.any(F <= 0):
            raise VerifyError("price levels must be strictly positive")
        if mode == "analytic":
            dJ = np.asarray(cand.djac(z_hat[:d], z_hat[d:]), dtype=float)
            dH = np.asarray(cand.dhess(z_hat[:d], z_hat[d:]), dtype=float)
        else:
            steps = h * np.maximum(1.0, np.abs(z_hat))
            J1, H1 = _fd_derivs(cand.fn, z_hat, steps, d)
            J0, H0 = _fd_derivs(cand.fn, np.zeros_like(z_hat), steps, d)
            dJ, dH = J1 - J0, H1 - H0
        R = _residual(dJ, dH, F, d)
        if not np.all(np.isfinite(R)):
            raise VerifyError("candidate produced a non-finite residual")
        res.append(R)
        pts.append((z_hat, F))
    mx = max((float(np.linalg.norm(r)) for r in res), default=0.0)
    return ResidualReport(pts, res, mx, mode, h if mode == "fd" else None, cand.name)


def random_points(rng: np.random.Generator, d: int, n: int, F_range=(0.5, 2.0), F_hat_scale=0.5,
                  x_hat_scale=0.3) -> list:
    pts = []
    for _ in range(n):
        F = rng.uniform(*F_range, size=d)
        z = np.concatenate([rng.uniform(-F_hat_scale, F_hat_scale, d), rng.uniform(-x_hat_scale, x_hat_scale, d)])
        pts.append((z, F))
    return pts


def grid_points(d: int) -> list:
    """A small deterministic grid of ``(z_hat, F)`` points."""
    pts = []
    for F in (0.5, 1.0, 2.0):
        for xh in (-0.2, -0.05, 0.1, 0.3):
            for Fh in (-0.25, 0.4):
                pts.append((np.concatenate([np.full(d, Fh), np.full(d, xh)]), np.full(d, F)))
    return pts


def fd_convergence(candidate, points: Sequence, steps: Sequence[float] = (0.08, 0.04, 0.02, 0.01)) -> dict:
    """Max finite-difference residual per step size and the fitted order in ``h``."""
    errs = [pde_residual(candidate, None, points, mode="fd", h=h).max_frobenius for h in steps]
    lh, le = np.log(np.asarray(steps)), np.log(np.asarray(errs))
    slope = float(np.polyfit(lh, le, 1)[0])
    C = float(np.median(np.asarray(errs) / np.asarray(steps) ** 2))
    return {"steps": list(steps), "errors": errs, "order": slope, "C": C}
