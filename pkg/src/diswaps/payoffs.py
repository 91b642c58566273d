"""Discretisation-invariant pay-offs and the classic scalar pay-offs they generalise.

A :class:`DiPayoff` is an element of the vector space of pay-offs

    phi(z_hat) = alpha' F_hat + F_hat' Omega F_hat + beta' (exp(x_hat) - 1) + gamma' x_hat

over a vector of martingale prices ``F`` and their logs ``x = ln F``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_BINOMIAL_N = 20


class PayoffError(ValueError):
    """Raised for malformed pay-offs or incompatible increments."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiPayoff:
    """Coefficients of a discretisation-invariant pay-off over ``len(labels)`` prices.

    ``omega`` is symmetrised on construction so two pay-offs with the same
    quadratic form compare equal.
    """

    labels: tuple[str, ...]
    alpha: np.ndarray
    omega: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        d = len(labels)
        if d == 0:
            raise PayoffError("a pay-off needs at least one component")
        if len(set(labels)) != d:
            raise PayoffError(f"duplicate labels in {labels}")
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim == 0 and d == 1:
            omega = omega.reshape(1, 1)
        for nm, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            if v.shape != (d,):
                raise PayoffError(f"{nm} has shape {v.shape}, expected ({d},)")
        if omega.shape != (d, d):
            raise PayoffError(f"omega has shape {omega.shape}, expected ({d}, {d})")
        omega = 0.5 * (omega + omega.T)
        for nm, v in (("alpha", alpha), ("omega", omega), ("beta", beta), ("gamma", gamma)):
            if not np.all(np.isfinite(v)):
                raise PayoffError(f"{nm} has non-finite entries")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "omega", _frozen(omega))
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "gamma", _frozen(gamma))

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def uses_logs(self) -> bool:
        """True when the pay-off needs ``x = ln F`` (non-zero beta or gamma)."""
        return bool(np.any(self.beta != 0) or np.any(self.gamma != 0))

    @classmethod
    def zeros(cls, labels: Sequence[str], name: str = "") -> "DiPayoff":
        d = len(labels)
        return cls(tuple(labels), np.zeros(d), np.zeros((d, d)), np.zeros(d), np.zeros(d), name)

    def __eq__(self, other):
        if not isinstance(other, DiPayoff):
            return NotImplemented
        return (
            self.labels == other.labels
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.omega, other.omega)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.gamma, other.gamma)
        )

    __hash__ = None

    def __add__(self, other: "DiPayoff") -> "DiPayoff":
        return combine(1.0, self, 1.0, other)

    def __sub__(self, other: "DiPayoff") -> "DiPayoff":
        return combine(1.0, self, -1.0, other)

    def __rmul__(self, a: float) -> "DiPayoff":
        return combine(a, self, 0.0, self)

    def __neg__(self) -> "DiPayoff":
        return combine(-1.0, self, 0.0, self)

    def __repr__(self):
        return (
            f"DiPayoff(name={self.name!r}, labels={self.labels}, alpha={self.alpha.tolist()}, "
            f"omega={self.omega.tolist()}, beta={self.beta.tolist()}, gamma={self.gamma.tolist()})"
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "labels": list(self.labels),
            "alpha": self.alpha.tolist(),
            "omega": self.omega.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
        }


def evaluate(payoff: DiPayoff, F_hat, x_hat=None) -> np.ndarray | float:
    """Evaluate the pay-off on price increments ``F_hat`` and log increments ``x_hat``.

    Both arrays carry the components on their last axis, so a whole panel of
    increments (paths x steps x d) is evaluated in one call. ``x_hat`` may be
    omitted when beta and gamma vanish.
    """
    F_hat = np.asarray(F_hat, dtype=float)
    if F_hat.shape[-1:] != (payoff.dim,):
        raise PayoffError(f"increment has {F_hat.shape[-1:]} components, pay-off has {payoff.dim}")
    out = F_hat @ payoff.alpha
    if np.any(payoff.omega != 0):
        out = out + np.einsum("...i,ij,...j->...", F_hat, payoff.omega, F_hat)
    if payoff.uses_logs:
        if x_hat is None:
            raise PayoffError("log increments are required when beta or gamma is non-zero")
        x_hat = np.asarray(x_hat, dtype=float)
        if x_hat.shape != F_hat.shape:
            raise PayoffError(f"x_hat shape {x_hat.shape} does not match F_hat shape {F_hat.shape}")
        out = out + np.expm1(x_hat) @ payoff.beta + x_hat @ payoff.gamma
    if out.ndim == 0:
        return float(out)
    return out


def evaluate_levels(payoff: DiPayoff, F_prev, F_next) -> np.ndarray | float:
    """Evaluate on the increment between two strictly positive price levels."""
    F_prev = np.asarray(F_prev, dtype=float)
    F_next = np.asarray(F_next, dtype=float)
    x_hat = None
    if payoff.uses_logs:
        if np.any(F_prev <= 0) or np.any(F_next <= 0):
            raise PayoffError("log increments need strictly positive price levels")
        x_hat = np.log(F_next) - np.log(F_prev)
    return evaluate(payoff, F_next - F_prev, x_hat)


def combine(a: float, p1: DiPayoff, b: float, p2: DiPayoff) -> DiPayoff:
    """Return the coefficient-wise linear combination ``a*p1 + b*p2``."""
    if p1.labels != p2.labels:
        raise PayoffError(f"cannot combine pay-offs over {p1.labels} and {p2.labels}")
    return DiPayoff(
        p1.labels,
        a * p1.alpha + b * p2.alpha,
        a * p1.omega + b * p2.omega,
        a * p1.beta + b * p2.beta,
        a * p1.gamma + b * p2.gamma,
    )


def lv_payoff(labels: Sequence[str] = ("F", "X"), on: str = "F") -> DiPayoff:
    """Log-variance pay-off ``2(exp(x_hat) - 1 - x_hat)`` embedded on component ``on``."""
    labels = tuple(labels)
    if on not in labels:
        raise PayoffError(f"{on!r} is not one of {labels}")
    p = DiPayoff.zeros(labels)
    j = labels.index(on)
    beta = np.zeros(len(labels))
    gamma = np.zeros(len(labels))
    beta[j], gamma[j] = 2.0, -2.0
    return DiPayoff(labels, p.alpha, p.omega, beta, gamma, name="lv")


def binom(n: int, k: int) -> int:
    if n > MAX_BINOMIAL_N:
        raise PayoffError(f"binomial coefficients are limited to n <= {MAX_BINOMIAL_N}")
    return math.comb(n, k)


def moment_weights(n: int, X0: float) -> np.ndarray:
    """The weights omega_1..omega_{n-1} of the n-th moment pay-off."""
    if n < 2:
        raise PayoffError("moment pay-offs need n >= 2")
    if n > MAX_BINOMIAL_N:
        raise PayoffError(f"moment pay-offs are limited to n <= {MAX_BINOMIAL_N}")
    w = np.empty(n - 1)
    for i in range(1, n - 1):
        s = sum(binom(n, j) * (-1) ** (n - j) for j in range(i + 1, n + 1))
        w[i - 1] = X0 ** (n - 1 - i) * s
    w[n - 2] = 1.0
    return w


def moment_labels(n: int) -> tuple[str, ...]:
    return tuple("X" if i == 1 else f"X{i}" for i in range(1, n))


def moment_payoff(n: int, X0: float) -> DiPayoff:
    """Pay-off whose fair value is the n-th central moment of ``ln F_T`` about ``X0``.

    Defined over the power log contracts ``(X, X2, ..., X{n-1})``; ``X0`` is the
    inception price of the log contract.
    """
    w = moment_weights(n, X0)
    d = n - 1
    omega = np.zeros((d, d))
    omega[0, 0] = w[0]
    for i in range(1, d):
        omega[0, i] = omega[i, 0] = 0.5 * w[i]
    z = np.zeros(d)
    return DiPayoff(moment_labels(n), z, omega, z, z, name=f"moment{n}")


def straddle_labels(strikes: Sequence[float]) -> tuple[str, ...]:
    ks = [_fmt_strike(k) for k in strikes]
    return tuple(f"P@{k}" for k in ks) + tuple(f"C@{k}" for k in ks)


def _fmt_strike(k: float) -> str:
    s = repr(float(k))
    return s[:-2] if s.endswith(".0") else s


def straddle_payoff(omega_tilde, strikes: Sequence[float]) -> DiPayoff:
    """Bilinear pay-off ``sum_{i>=j} omega_tilde[i, j] * C_hat_i * P_hat_j`` on puts and calls.

    ``omega_tilde`` must be lower triangular and the strikes strictly ascending,
    so each call in a product has a strike at or above its put; at expiry one of
    the two factors is then always zero.
    """
    strikes = np.asarray(strikes, dtype=float).reshape(-1)
    ot = np.atleast_2d(np.asarray(omega_tilde, dtype=float))
    d = strikes.size
    if ot.shape != (d, d):
        raise PayoffError(f"omega_tilde has shape {ot.shape}, expected ({d}, {d})")
    if np.any(np.diff(strikes) <= 0):
        raise PayoffError("strikes must be strictly ascending")
    if np.any(strikes <= 0):
        raise PayoffError("strikes must be positive")
    if np.any(np.triu(ot, 1) != 0):
        raise PayoffError("omega_tilde must be lower triangular")
    omega = np.zeros((2 * d, 2 * d))
    # rows are puts, columns calls: P_hat' (omega_tilde') C_hat
    omega[:d, d:] = 0.5 * ot.T
    omega[d:, :d] = 0.5 * ot
    z = np.zeros(2 * d)
    return DiPayoff(straddle_labels(strikes), z, omega, z, z, name="straddle")


class ClassicPayoffKind(enum.Enum):
    SquaredLogReturn = "SquaredLogReturn"
    LogVariance = "LogVariance"
    EntropyVariance = "EntropyVariance"
    Tau = "Tau"
    NeubergerPsi = "NeubergerPsi"


def classic_eval(kind: ClassicPayoffKind | str, x_hat, v_hat=None):
    """Scalar pay-offs of a log return ``x_hat`` (and variance increment ``v_hat`` for psi)."""
    kind = ClassicPayoffKind(kind)
    x = np.asarray(x_hat, dtype=float)
    if kind is ClassicPayoffKind.NeubergerPsi:
        if v_hat is None:
            raise PayoffError("NeubergerPsi needs the variance increment v_hat")
        out = 3.0 * np.asarray(v_hat, dtype=float) * np.expm1(x) + _tau(x)
    elif v_hat is not None:
        raise PayoffError(f"{kind.value} takes no variance increment")
    elif kind is ClassicPayoffKind.SquaredLogReturn:
        out = x * x
    elif kind is ClassicPayoffKind.LogVariance:
        out = 2.0 * (np.expm1(x) - x)
    elif kind is ClassicPayoffKind.EntropyVariance:
        out = 2.0 * (x * np.exp(x) - np.expm1(x))
    else:
        out = _tau(x)
    return float(out) if out.ndim == 0 else out


def _tau(x):
    return 6.0 * (x * np.exp(x) - 2.0 * np.expm1(x) + x)


@dataclass(frozen=True)
class ClassicPayoff:
    """A classic pay-off of the log return of one component, for comparison runs."""

    kind: ClassicPayoffKind
    on: str = "F"

    @property
    def labels(self) -> tuple[str, ...]:
        return (self.on,)

    @property
    def name(self) -> str:
        return self.kind.value

    def __call__(self, x_hat):
        return classic_eval(self.kind, x_hat)


# --- pay-off specification files -------------------------------------------


def payoff_from_dict(spec: dict):
    """Build a pay-off from its JSON form.

    Accepts the explicit coefficient form and the shorthands ``{"moment": {...}}``,
    ``{"straddle": {...}}``, ``{"lv": {...}}`` and ``{"classic": "<kind>"}``.
    A moment shorthand without ``X0`` returns ``None`` for it; callers resolve it
    from market data via :func:`resolve_moment_X0`.
    """
    if not isinstance(spec, dict):
        raise PayoffError("pay-off specification must be a JSON object")
    if "moment" in spec:
        m = spec["moment"]
        n = int(m["n"])
        if m.get("X0") is None:
            return MomentShorthand(n)
        return moment_payoff(n, float(m["X0"]))
    if "straddle" in spec:
        s = spec["straddle"]
        strikes = s["strikes"]
        ot = s.get("omega_tilde", np.eye(len(strikes)).tolist())
        return straddle_payoff(ot, strikes)
    if "lv" in spec:
        s = spec["lv"] or {}
        return lv_payoff(tuple(s.get("labels", ("F", "X"))), s.get("on", "F"))
    if "classic" in spec:
        c = spec["classic"]
        if isinstance(c, dict):
            return ClassicPayoff(ClassicPayoffKind(c["kind"]), c.get("on", "F"))
        return ClassicPayoff(ClassicPayoffKind(c))
    missing = [k for k in ("labels", "alpha", "omega", "beta", "gamma") if k not in spec]
    if missing:
        raise PayoffError(f"pay-off specification is missing {missing}")
    if "dim" in spec and int(spec["dim"]) != len(spec["labels"]):
        raise PayoffError("dim does not match the number of labels")
    return DiPayoff(
        tuple(spec["labels"]), spec["alpha"], spec["omega"], spec["beta"], spec["gamma"],
        name=spec.get("name", ""),
    )


@dataclass(frozen=True)
class MomentShorthand:
    """A moment pay-off whose ``X0`` is filled in from market data."""

    n: int

    def resolve(self, X0: float) -> DiPayoff:
        return moment_payoff(self.n, X0)


def load_payoff(path: str | Path):
    with open(path) as fh:
        return payoff_from_dict(json.load(fh))


def random_payoff(rng: np.random.Generator, labels: Sequence[str], log_labels: Sequence[str] = ("F",),
                  scale: float = 1.0) -> DiPayoff:
    """Random pay-off with all of alpha and omega populated.

    beta and gamma are restricted to ``log_labels`` (components whose log is
    meaningful for the caller).
    """
    labels = tuple(labels)
    d = len(labels)
    mask = np.array([lab in log_labels for lab in labels], dtype=float)
    a = rng.normal(size=(d, d))
    return DiPayoff(
        labels,
        scale * rng.normal(size=d),
        scale * (a + a.T) / 2,
        scale * rng.normal(size=d) * mask,
        scale * rng.normal(size=d) * mask,
        name="random",
    )


# --- realised legs -------------------------------------------------------------


def step_values(payoff, levels, logs=None) -> np.ndarray:
    """Per-step pay-offs along paths.

    ``levels`` holds component paths shaped ``[..., time, d]`` (``[..., time]``
    for a :class:`ClassicPayoff`, which needs only ``logs``). The linear part of a
    :class:`DiPayoff` is included step by step here; :func:`realised_leg`
    telescopes it instead.
    """
    if isinstance(payoff, ClassicPayoff):
        x = np.asarray(logs if logs is not None else np.log(levels), dtype=float)
        return classic_eval(payoff.kind, np.diff(x, axis=-1))
    levels = np.asarray(levels, dtype=float)
    F_hat = np.diff(levels, axis=-2)
    x_hat = None
    if payoff.uses_logs:
        x_hat = np.diff(_log_components(payoff, levels, logs), axis=-2)
    return evaluate(payoff, F_hat, x_hat)


def _log_components(payoff: DiPayoff, levels, logs):
    if logs is not None:
        return np.asarray(logs, dtype=float)
    used = (payoff.beta != 0) | (payoff.gamma != 0)
    if np.any(levels[..., used] <= 0):
        raise PayoffError("log increments need strictly positive levels on components with beta or gamma")
    out = np.zeros_like(levels)
    out[..., used] = np.log(levels[..., used])
    return out


def realised_leg(payoff, levels, logs=None) -> np.ndarray:
    """Floating leg ``sum over the partition of phi(z_hat)`` for each path.

    The linear part ``alpha' F_hat`` is summed as ``alpha' (F_T - F_0)`` so that
    any two partitions give bit-identical linear legs.
    """
    if isinstance(payoff, ClassicPayoff):
        return np.sum(step_values(payoff, levels, logs), axis=-1)
    levels = np.asarray(levels, dtype=float)
    nonlinear = DiPayoff(payoff.labels, np.zeros(payoff.dim), payoff.omega, payoff.beta, payoff.gamma)
    out = (levels[..., -1, :] - levels[..., 0, :]) @ payoff.alpha
    if np.any(nonlinear.omega != 0) or nonlinear.uses_logs:
        out = out + np.sum(step_values(nonlinear, levels, logs), axis=-1)
    return out
