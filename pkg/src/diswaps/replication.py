"""Option chains, power log contracts and their static replication.

Synthetic chains come from Black-76 (or the Merton jump series); the power log
contract ``X_t^(n) = E_t[(ln F_T)^n]`` is recovered from a chain by trapezoidal
integration of ``gamma_n(k) q(k)`` over log-strike.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import poisson

from .simulate import ModelKind, ModelSpec, PathPanel, SimulationError, raw_moments_from_cumulants


class ChainError(ValueError):
    pass


# --- Black-76 ----------------------------------------------------------------


def _black(F, k, sd, is_call):
    """Forward option value for total log-sd ``sd`` (``sd = 0`` gives intrinsic value)."""
    F, k, sd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (F, k, sd)))
    out = np.empty(F.shape)
    pos = sd > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(F / k) + 0.5 * sd * sd) / sd
        d2 = d1 - sd
        if is_call:
            val = F * ndtr(d1) - k * ndtr(d2)
            intrinsic = np.maximum(F - k, 0.0)
        else:
            val = k * ndtr(-d2) - F * ndtr(-d1)
            intrinsic = np.maximum(k - F, 0.0)
    out[pos] = val[pos]
    out[~pos] = intrinsic[~pos]
    return np.maximum(out, 0.0)


def black76(F, k, sigma, tau, is_call: bool = True):
    """Undiscounted Black-76 value of a forward call or put."""
    arrs = [np.asarray(a, dtype=float) for a in (F, k, sigma, tau)]
    for name, a in zip(("F", "k", "sigma", "tau"), arrs):
        if np.any(~(a > 0)):
            raise ChainError(f"black76 needs positive {name}")
    out = _black(arrs[0], arrs[1], arrs[2] * np.sqrt(arrs[3]), is_call)
    return float(out) if out.ndim == 0 else out


def _otm_pair(F, k, sd):
    """Put and call with the OTM side priced directly and the other by parity."""
    F, k, sd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (F, k, sd)))
    put = _black(F, k, sd, False)
    call = _black(F, k, sd, True)
    below = k <= F
    call = np.where(below, put + (F - k), call)
    put = np.where(below, put, call - (F - k))
    return put, call


def _poisson_cutoff(mean: float, tail: float = 1e-17) -> int:
    """Smallest ``n`` past the mode with ``P(N = n) < tail``; later terms are below double precision."""
    if mean <= 0:
        return 0
    n, pmf = 0, math.exp(-mean)
    while n < mean or pmf >= tail:
        n += 1
        pmf *= mean / n
    return n


def model_option_prices(model: ModelSpec, F, k, tau):
    """Risk-neutral forward put and call prices under a GBM or Merton model.

    ``F`` and ``tau`` broadcast; ``tau = 0`` returns intrinsic values.
    """
    F = np.asarray(F, dtype=float)
    tau = np.asarray(tau, dtype=float)
    k = np.asarray(k, dtype=float)
    if model.kind is ModelKind.GBM or (model.kind is ModelKind.MertonJump and model.jump.intensity == 0):
        return _otm_pair(F, k, model.vol * np.sqrt(tau))
    if model.kind is not ModelKind.MertonJump:
        raise SimulationError(f"no closed-form option prices under {model.kind.value}")
    j = model.jump
    lam_tau = j.intensity * float(np.max(tau))
    n_max = _poisson_cutoff(lam_tau)
    F, k, tau = (np.array(a, dtype=float) for a in np.broadcast_arrays(F, k, tau))
    shape = F.shape
    F, k, tau = F.reshape(-1), k.reshape(-1), tau.reshape(-1)
    above = k > F
    otm = np.zeros(F.size)
    step = math.exp(j.mean_log_jump + 0.5 * j.sd_log_jump**2)
    # each entry is priced once, on its out-of-the-money side, then completed by parity
    for side, sel in ((False, ~above), (True, above)):
        if not np.any(sel):
            continue
        Fs, ks, ts = F[sel], k[sel], tau[sel]
        # weights and sds depend on tau only, which takes few distinct values
        ut, inv = np.unique(ts, return_inverse=True)
        base = Fs * np.exp(-j.intensity * j.kappa_bar * ts)
        acc = np.zeros(Fs.size)
        for n in range(n_max + 1):
            w = poisson.pmf(n, j.intensity * ut)[inv]
            sd = np.sqrt(model.vol**2 * ut + n * j.sd_log_jump**2)[inv]
            acc += w * _black(base * step**n, ks, sd, side)
        otm[sel] = acc
    put = np.where(above, otm - (F - k), otm)
    call = np.where(above, otm, otm + (F - k))
    return np.maximum(put, 0.0).reshape(shape), np.maximum(call, 0.0).reshape(shape)


# --- chains and strike grids -------------------------------------------------


@dataclass(frozen=True)
class StrikeGrid:
    k_min: float
    k_max: float
    n_strikes: int
    spacing: str = "log-uniform"

    def __post_init__(self):
        if not 0 < self.k_min < self.k_max:
            raise ChainError("need 0 < k_min < k_max")
        if self.n_strikes < 16:
            raise ChainError("a strike grid needs at least 16 strikes")
        if self.spacing != "log-uniform":
            raise ChainError(f"unsupported spacing {self.spacing!r}")

    @property
    def strikes(self) -> np.ndarray:
        return np.exp(np.linspace(math.log(self.k_min), math.log(self.k_max), self.n_strikes))


def default_grid(F0: float, sigma: float, T: float, n_strikes: int = 4096, width: float = 10.0) -> StrikeGrid:
    """Log-uniform grid over ``F0 * exp(+-width * sigma * sqrt(T))``."""
    if min(F0, sigma, T, width) <= 0:
        raise ChainError("F0, sigma, T and width must be positive")
    half = width * sigma * math.sqrt(T)
    return StrikeGrid(F0 * math.exp(-half), F0 * math.exp(half), n_strikes)


@dataclass(frozen=True, eq=False)
class OptionChain:
    """Forward put and call prices at one valuation time, strikes ascending."""

    F: float
    T_remaining: float
    strikes: np.ndarray
    puts: np.ndarray
    calls: np.ndarray

    def __post_init__(self):
        k = np.array(self.strikes, dtype=float)
        p = np.array(self.puts, dtype=float)
        c = np.array(self.calls, dtype=float)
        if not (self.F > 0 and self.T_remaining > 0):
            raise ChainError("chain needs a positive forward and time to expiry")
        if k.ndim != 1 or k.size < 2 or p.shape != k.shape or c.shape != k.shape:
            raise ChainError("strikes, puts and calls must be 1-d arrays of equal length")
        if np.any(k <= 0) or np.any(np.diff(k) <= 0):
            raise ChainError("strikes must be positive and strictly ascending")
        tol = 1e-9 * max(self.F, float(k[-1]))
        if np.any(c < np.maximum(self.F - k, 0) - tol) or np.any(p < np.maximum(k - self.F, 0) - tol):
            raise ChainError("option prices below intrinsic value")
        if np.any(c > self.F + tol) or np.any(p > k + tol):
            raise ChainError("option prices above their trivial upper bounds")
        for a in (k, p, c):
            a.setflags(write=False)
        object.__setattr__(self, "strikes", k)
        object.__setattr__(self, "puts", p)
        object.__setattr__(self, "calls", c)

    @property
    def x(self) -> float:
        return math.log(self.F)

    def parity_error(self) -> float:
        return float(np.max(np.abs(self.calls - self.puts - (self.F - self.strikes))))

    def otm(self, separation: float | None = None) -> np.ndarray:
        s = self.F if separation is None else separation
        return np.where(self.strikes <= s, self.puts, self.calls)


def black76_chain(F: float, sigma: float, tau: float, grid: StrikeGrid | None = None,
                  strikes: Sequence[float] | None = None) -> OptionChain:
    if strikes is None:
        grid = grid or default_grid(F, sigma, tau)
        strikes = grid.strikes
    k = np.asarray(strikes, dtype=float)
    put, call = _otm_pair(F, k, sigma * math.sqrt(tau))
    return OptionChain(F, tau, k, put, call)


def model_chain(model: ModelSpec, F: float, tau: float, strikes: Sequence[float]) -> OptionChain:
    put, call = model_option_prices(model.risk_neutral(), F, np.asarray(strikes, dtype=float), tau)
    return OptionChain(F, tau, np.asarray(strikes, dtype=float), put, call)


def read_chain_csv(path: str | Path, T_remaining: float = 1.0, F: float | None = None) -> OptionChain:
    """Read a ``strike,put,call`` CSV; the forward defaults to the parity-implied one."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ChainError(f"{path}: empty chain file")
    try:
        k = np.array([float(r["strike"]) for r in rows])
        p = np.array([float(r["put"]) for r in rows])
        c = np.array([float(r["call"]) for r in rows])
    except KeyError as e:
        raise ChainError(f"{path}: missing column {e.args[0]!r}") from None
    order = np.argsort(k)
    k, p, c = k[order], p[order], c[order]
    if F is None:
        F = float(np.median(c - p + k))
    return OptionChain(F, T_remaining, k, p, c)


def write_chain_csv(chain: OptionChain, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strike", "put", "call"])
        for k, p, c in zip(chain.strikes, chain.puts, chain.calls):
            w.writerow([repr(float(k)), repr(float(p)), repr(float(c))])


# --- power log contracts -----------------------------------------------------


def cm_weight(n: int, k):
    """Strike weight ``gamma_n(k) = n (ln k)^(n-2) k^-2 (n - 1 - ln k)``."""
    if n < 1:
        raise ChainError("power log contracts need n >= 1")
    k = np.asarray(k, dtype=float)
    if np.any(~(k > 0)):
        raise ChainError("strikes must be positive")
    lk = np.log(k)
    if n == 1:
        out = -1.0 / (k * k)
    else:
        out = n * lk ** (n - 2) * (n - 1 - lk) / (k * k)
    return float(out) if out.ndim == 0 else out


def log_strike_weights(strikes) -> np.ndarray:
    """Trapezoid weights for ``integral f(k) dk = integral k f(k) d ln k`` on the given strikes."""
    k = np.asarray(strikes, dtype=float)
    u = np.log(k)
    du = np.diff(u)
    w = np.zeros_like(u)
    w[:-1] += 0.5 * du
    w[1:] += 0.5 * du
    return w * k


def replicate(chain: OptionChain, f: Callable, df: Callable, d2f: Callable,
              separation: float | None = None) -> float:
    """Price of a claim paying ``f(F_T)`` from the chain (static replication).

    ``f(s) + f'(s)(F - s) + integral f''(k) q(k) dk`` with puts below the
    separation strike ``s`` and calls above it.
    """
    s = chain.F if separation is None else float(separation)
    q = chain.otm(s)
    w = log_strike_weights(chain.strikes)
    return float(f(s) + df(s) * (chain.F - s) + np.sum(w * d2f(chain.strikes) * q))


def power_log_price(chain: OptionChain, n: int, x_t: float | None = None,
                    separation: float | None = None) -> float:
    """``X_t^(n)`` from OTM options, puts up to the separation strike (default ``F_t``)."""
    if n < 1:
        raise ChainError("power log contracts need n >= 1")
    s = chain.F if separation is None else float(separation)
    if x_t is None:
        x_t = chain.x
    elif abs(x_t - chain.x) > 1e-12 * max(1.0, abs(chain.x)):
        raise ChainError("x_t must equal ln of the chain forward")
    w = log_strike_weights(chain.strikes)
    integral = float(np.sum(w * cm_weight(n, chain.strikes) * chain.otm(s)))
    if separation is None:
        return x_t**n + integral
    ls = math.log(s)
    return ls**n + n * ls ** (n - 1) * (chain.F - s) / s + integral


def entropy_price(chain: OptionChain, n: int) -> float:
    """``E[F_T (ln F_T)^n]`` replicated from the chain."""
    def f(k):
        return k * np.log(k) ** n

    def df(k):
        lk = np.log(k)
        return lk**n + (n * lk ** (n - 1) if n >= 1 else 0.0)

    def d2f(k):
        lk = np.log(k)
        if n == 0:
            return np.zeros_like(k)
        second = n * (n - 1) * lk ** (n - 2) if n >= 2 else 0.0
        return (n * lk ** (n - 1) + second) / k

    return replicate(chain, f, df, d2f)


def second_moment_price(chain: OptionChain) -> float:
    """``E[F_T^2]`` replicated from the chain."""
    return replicate(chain, lambda k: k * k, lambda k: 2 * k, lambda k: 2.0 + 0 * k)


@dataclass(frozen=True)
class StaticPortfolio:
    """Buy-and-hold replication of a power log contract set up at inception."""

    n: int
    constant: float
    forward_units: float
    F0: float
    strikes: np.ndarray
    put_weights: np.ndarray
    call_weights: np.ndarray

    def value(self, chain: OptionChain) -> float:
        if chain.strikes.shape != self.strikes.shape or not np.allclose(chain.strikes, self.strikes, rtol=1e-14):
            raise ChainError("portfolio must be valued on the strikes it was built on")
        return float(self.constant + self.forward_units * chain.F
                     + self.put_weights @ chain.puts + self.call_weights @ chain.calls)


def buy_and_hold_portfolio(n: int, chain0: OptionChain) -> StaticPortfolio:
    """Static portfolio whose value tracks ``X_t^(n)`` with the put/call split fixed at ``F_0``."""
    if n < 1:
        raise ChainError("power log contracts need n >= 1")
    F0 = chain0.F
    x0 = math.log(F0)
    slope = n * x0 ** (n - 1) if n > 1 else 1.0
    w = log_strike_weights(chain0.strikes) * cm_weight(n, chain0.strikes)
    below = chain0.strikes <= F0
    return StaticPortfolio(
        n=n,
        constant=x0**n - slope,
        forward_units=slope / F0,
        F0=F0,
        strikes=chain0.strikes,
        put_weights=np.where(below, w, 0.0),
        call_weights=np.where(below, 0.0, w),
    )


# --- analytic component paths -------------------------------------------------

_LABEL = re.compile(r"^(?:(F)|X(\d*)|([PC])@(.+))$")


def parse_label(label: str) -> tuple:
    """``"F"`` -> ("F",), ``"X3"`` -> ("X", 3), ``"P@100"`` -> ("P", 100.0)."""
    m = _LABEL.match(label)
    if not m:
        raise ChainError(f"unknown component label {label!r}")
    if m.group(1):
        return ("F",)
    if m.group(3):
        return (m.group(3), float(m.group(4)))
    n = int(m.group(2)) if m.group(2) else 1
    if n < 1:
        raise ChainError(f"bad power in {label!r}")
    return ("X", n)


def conditional_log_moments(model: ModelSpec, x, tau, n_max: int, tilt: float = 0.0) -> list:
    """``E_t[x_T^n]`` for ``n = 0..n_max`` (or ``E_t[F_T x_T^n] / F_t`` with ``tilt = 1``)."""
    q = model.risk_neutral()
    x = np.asarray(x, dtype=float)
    mu = raw_moments_from_cumulants(q.log_cumulants(tau, max(n_max, 1), tilt), n_max)
    scale = np.exp(q.log_mgf(tau, tilt)) if tilt else 1.0
    out = []
    for n in range(n_max + 1):
        acc = 0.0
        for j in range(n + 1):
            acc = acc + math.comb(n, j) * x ** (n - j) * mu[j]
        out.append(acc * scale)
    return out


def heston_log_contract(model: ModelSpec, x, v, tau):
    h = model.heston
    tau = np.asarray(tau, dtype=float)
    decay = -np.expm1(-h.kappa * tau) / h.kappa
    return x - 0.5 * (h.theta * tau + (np.asarray(v) - h.theta) * decay)


def component_values(model: ModelSpec, labels: Sequence[str], x, tau, v=None) -> dict:
    """Risk-neutral prices of the labelled components given ``x = ln F`` and time to expiry."""
    x = np.asarray(x, dtype=float)
    parsed = {lab: parse_label(lab) for lab in labels}
    out = {}
    priced: dict = {}
    powers = [p[1] for p in parsed.values() if p[0] == "X"]
    if powers:
        if model.kind is ModelKind.Heston:
            if max(powers) > 1:
                raise SimulationError("Heston supports only the log contract among power log contracts")
            out_moments = [None, heston_log_contract(model, x, v, tau)]
        else:
            out_moments = conditional_log_moments(model, x, tau, max(powers))
    for lab, p in parsed.items():
        if p[0] == "F":
            out[lab] = np.exp(x)
        elif p[0] == "X":
            out[lab] = np.broadcast_to(out_moments[p[1]], x.shape).copy()
        else:
            if p[1] not in priced:
                priced[p[1]] = model_option_prices(model.risk_neutral(), np.exp(x), p[1], tau)
            put, call = priced[p[1]]
            out[lab] = put if p[0] == "P" else call
    return out


def attach_components(panel: PathPanel, labels: Sequence[str]) -> PathPanel:
    """Fill ``panel.aux`` with analytic price paths for every non-``F`` label."""
    todo = [lab for lab in labels if lab != "F" and lab not in panel.aux]
    if not todo:
        return panel
    tau = panel.partition.T - panel.partition.times
    tau = np.maximum(tau, 0.0)[None, :]
    vals = component_values(panel.model, todo, panel.x, tau, panel.aux.get("_v"))
    panel.aux.update(vals)
    return panel
