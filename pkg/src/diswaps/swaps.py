"""Fair-value swap rates for discretisation-invariant pay-offs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .payoffs import DiPayoff, binom, moment_labels
from .replication import (
    OptionChain,
    component_values,
    conditional_log_moments,
    entropy_price,
    heston_log_contract,
    parse_label,
    power_log_price,
    second_moment_price,
)
from .simulate import ModelKind, ModelSpec, Partition

PSD_TOL = 1e-10


class StateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarketState:
    """Prices ``F``, second moments ``Sigma = E[F_T F_T']`` and log contracts ``X = E[ln F_T]``.

    Entries that cannot be priced for the given components are NaN; pricing a
    pay-off that needs one of them raises :class:`StateError`.
    """

    labels: tuple[str, ...]
    F0: np.ndarray
    Sigma0: np.ndarray
    X0: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        d = len(labels)
        F0 = np.array(self.F0, dtype=float).reshape(-1)
        S = np.array(self.Sigma0, dtype=float)
        X0 = np.array(self.X0, dtype=float).reshape(-1)
        if F0.shape != (d,) or X0.shape != (d,) or S.shape != (d, d):
            raise StateError("state arrays do not match the number of labels")
        if not np.all(np.isfinite(F0)):
            raise StateError("F0 must be finite")
        sym = np.where(np.isfinite(S), S, 0.0)
        if not np.allclose(sym, sym.T, rtol=1e-12, atol=1e-14) or not np.array_equal(np.isnan(S), np.isnan(S.T)):
            raise StateError("Sigma0 must be symmetric")
        ok = np.all(np.isfinite(S), axis=1)
        if np.any(ok):
            sub = S[np.ix_(ok, ok)] - np.outer(F0[ok], F0[ok])
            sub = 0.5 * (sub + sub.T)
            eig = np.linalg.eigvalsh(sub)
            scale = max(1.0, float(np.max(np.abs(S[np.ix_(ok, ok)]))))
            if eig.min() < -PSD_TOL * scale:
                raise StateError(f"Sigma0 - F0 F0' is not positive semi-definite (min eigenvalue {eig.min():.3e})")
        for a in (F0, S, X0):
            a.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "F0", F0)
        object.__setattr__(self, "Sigma0", S)
        object.__setattr__(self, "X0", X0)

    @property
    def x0(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.F0 > 0, np.log(np.where(self.F0 > 0, self.F0, 1.0)), np.nan)

    def reorder(self, labels: Sequence[str]) -> "MarketState":
        idx = [self.labels.index(lab) for lab in labels]
        return MarketState(tuple(labels), self.F0[idx], self.Sigma0[np.ix_(idx, idx)], self.X0[idx])


def _needed(payoff: DiPayoff, state: MarketState):
    if payoff.labels != state.labels:
        if set(payoff.labels) <= set(state.labels):
            state = state.reorder(payoff.labels)
        else:
            raise StateError(f"state over {state.labels} cannot price a pay-off over {payoff.labels}")
    return state


def fair_value_terms(payoff: DiPayoff, state: MarketState) -> dict:
    """Quadratic and log parts of the fair swap rate."""
    state = _needed(payoff, state)
    om = payoff.omega
    nz = om != 0
    M = state.Sigma0 - np.outer(state.F0, state.F0)
    if np.any(nz & ~np.isfinite(M)):
        bad = [(state.labels[i], state.labels[j]) for i, j in zip(*np.nonzero(nz & ~np.isfinite(M)))]
        raise StateError(f"second moments unavailable for {bad[:3]}")
    quad = float(np.sum(np.where(nz, om * np.where(nz, M, 0.0), 0.0)))
    g = payoff.gamma
    gz = g != 0
    L = state.X0 - state.x0
    if np.any(gz & ~np.isfinite(L)):
        bad = [state.labels[i] for i in np.nonzero(gz & ~np.isfinite(L))[0]]
        raise StateError(f"log contracts unavailable for {bad}")
    log_term = float(np.sum(np.where(gz, g * np.where(gz, L, 0.0), 0.0)))
    return {"quadratic_term": quad, "log_term": log_term}


def fair_value(payoff: DiPayoff, state: MarketState) -> float:
    """``tr(Omega [Sigma0 - F0 F0']) + gamma' (X0 - x0)``; alpha and beta never enter."""
    t = fair_value_terms(payoff, state)
    return t["quadratic_term"] + t["log_term"]


def moment_rate(n: int, X_powers: Sequence[float]) -> float:
    """n-th central moment of ``ln F_T`` from power log prices ``(X0, X0^(2), ..., X0^(n))``."""
    X = np.asarray(X_powers, dtype=float).reshape(-1)
    if n < 2:
        raise ValueError("moment swaps need n >= 2")
    if X.size != n:
        raise ValueError(f"need {n} power log prices, got {X.size}")
    m = -X[0]
    return float(sum(binom(n, i) * m ** (n - i) * X[i - 1] for i in range(1, n + 1)) + m**n)


def straddle_rate(P0, C0, omega_tilde) -> float:
    """Fair rate ``-C0' omega_tilde P0`` of a straddle swap; needs only traded quotes."""
    P0 = np.atleast_1d(np.asarray(P0, dtype=float))
    C0 = np.atleast_1d(np.asarray(C0, dtype=float))
    ot = np.atleast_2d(np.asarray(omega_tilde, dtype=float))
    if P0.shape != C0.shape or ot.shape != (P0.size, P0.size):
        raise ValueError("put, call and omega_tilde sizes do not match")
    return float(-(C0 @ ot @ P0))


def frequency_rate() -> float:
    """A frequency swap exchanges two legs with the same fair value."""
    return 0.0


def calendar_rate(v_long: float, v_short: float) -> float:
    return float(v_long) - float(v_short)


@dataclass(frozen=True)
class SwapSpec:
    payoff: DiPayoff
    maturity: float
    monitoring: Partition
    kind: str = "plain"
    hedge_partition: Partition | None = None
    short_maturity: float | None = None

    def __post_init__(self):
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")
        if abs(self.monitoring.T - self.maturity) > 1e-12 * max(1.0, self.maturity):
            raise ValueError("monitoring partition must end at the maturity")
        if self.kind == "frequency":
            if self.hedge_partition is None or not self.hedge_partition.is_subset_of(self.monitoring):
                raise ValueError("a frequency swap needs a hedge partition nested in the monitoring partition")
        elif self.kind == "calendar":
            if self.short_maturity is None or not 0 < self.short_maturity < self.maturity:
                raise ValueError("a calendar swap needs 0 < short_maturity < maturity")
        elif self.kind != "plain":
            raise ValueError(f"unknown swap kind {self.kind!r}")


# --- building market states --------------------------------------------------


def snapshot_arrays(model: ModelSpec, labels: Sequence[str], x, tau, v=None):
    """Analytic ``(F, Sigma, X)`` for the labelled components, broadcasting over ``x``.

    Returns arrays shaped ``x.shape + (d,)``, ``x.shape + (d, d)`` and
    ``x.shape + (d,)``; unsupported entries are NaN.
    """
    labels = tuple(labels)
    d = len(labels)
    x = np.asarray(x, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), x.shape)
    parsed = [parse_label(lab) for lab in labels]
    vals = component_values(model, labels, x, tau, v)
    F = np.stack([np.broadcast_to(vals[lab], x.shape) for lab in labels], axis=-1)
    S = np.full(x.shape + (d, d), np.nan)
    X = np.full(x.shape + (d,), np.nan)
    q = model.risk_neutral()

    if model.kind is ModelKind.Heston:
        for i, p in enumerate(parsed):
            if p[0] == "F":
                X[..., i] = heston_log_contract(q, x, v, tau)
        _fill_option_products(parsed, S, x.shape)
        return F, S, X

    pw = [p[1] for p in parsed if p[0] == "X"]
    has_F = any(p[0] == "F" for p in parsed)
    top = 2 * max(pw) if pw else 1
    moments = conditional_log_moments(q, x, tau, top)
    tilted = conditional_log_moments(q, x, tau, max(pw), tilt=1.0) if (pw and has_F) else None
    Fx = np.exp(x)
    for i, pi in enumerate(parsed):
        if pi[0] == "F":
            X[..., i] = moments[1]
        for j, pj in enumerate(parsed):
            kinds = (pi[0], pj[0])
            if kinds == ("X", "X"):
                S[..., i, j] = moments[pi[1] + pj[1]]
            elif kinds == ("F", "F"):
                S[..., i, j] = Fx * Fx * np.exp(q.log_mgf(tau, 2.0))
            elif kinds in (("F", "X"), ("X", "F")):
                n = pi[1] if pi[0] == "X" else pj[1]
                S[..., i, j] = Fx * tilted[n]
    _fill_option_products(parsed, S, x.shape)
    return F, S, X


def _fill_option_products(parsed, S, shape):
    # E[(a - F_T)^+ (F_T - b)^+] vanishes whenever the put strike a <= call strike b
    for i, pi in enumerate(parsed):
        for j, pj in enumerate(parsed):
            if pi[0] == "P" and pj[0] == "C" and pi[1] <= pj[1]:
                S[..., i, j] = S[..., j, i] = 0.0


def state_from_model(model: ModelSpec, labels: Sequence[str], T: float) -> MarketState:
    """Inception state of a model whose forward starts at ``model.F0``."""
    x0 = math.log(model.F0)
    v0 = model.heston.v0 if model.kind is ModelKind.Heston else None
    F, S, X = snapshot_arrays(model, labels, np.array(x0), np.array(T), v0)
    return MarketState(tuple(labels), F, S, X)


def state_from_chain(chain: OptionChain, labels: Sequence[str]) -> MarketState:
    """Inception state replicated from an option chain (the production path).

    Supports ``F``, power log contracts ``X``, ``X<n>`` and options ``P@k``/``C@k``
    quoted in the chain.
    """
    labels = tuple(labels)
    d = len(labels)
    parsed = [parse_label(lab) for lab in labels]
    F = np.empty(d)
    S = np.full((d, d), np.nan)
    X = np.full(d, np.nan)
    cache: dict = {}

    def plc(n):
        if n not in cache:
            cache[n] = power_log_price(chain, n)
        return cache[n]

    for i, p in enumerate(parsed):
        if p[0] == "F":
            F[i] = chain.F
            X[i] = plc(1)
        elif p[0] == "X":
            F[i] = plc(p[1])
        else:
            hit = np.nonzero(np.abs(chain.strikes - p[1]) <= 1e-9 * p[1])[0]
            if hit.size == 0:
                raise StateError(f"strike {p[1]} is not quoted in the chain")
            F[i] = (chain.puts if p[0] == "P" else chain.calls)[hit[0]]
    for i, pi in enumerate(parsed):
        for j, pj in enumerate(parsed):
            kinds = (pi[0], pj[0])
            if kinds == ("X", "X"):
                S[i, j] = plc(pi[1] + pj[1])
            elif kinds == ("F", "F"):
                S[i, j] = second_moment_price(chain)
            elif kinds in (("F", "X"), ("X", "F")):
                n = pi[1] if pi[0] == "X" else pj[1]
                S[i, j] = entropy_price(chain, n)
    _fill_option_products(parsed, S, ())
    return MarketState(labels, F, S, X)


def moment_state(X_powers: Sequence[float], n: int) -> MarketState:
    """State over ``(X, ..., X{n-1})`` from power log prices ``X0^(1..2n-2)``."""
    X = np.asarray(X_powers, dtype=float).reshape(-1)
    if n < 2:
        raise StateError("moment swaps need n >= 2")
    if X.size < 2 * n - 2:
        raise StateError(f"an order-{n} moment swap needs power log contracts up to order {2 * n - 2}")
    d = n - 1
    F0 = X[:d]
    S = np.array([[X[i + j + 1] for j in range(d)] for i in range(d)])
    return MarketState(moment_labels(n), F0, S, np.full(d, np.nan))
