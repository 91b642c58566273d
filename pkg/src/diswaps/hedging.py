"""Value-process increments, realised/implied attribution and hedge portfolios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .payoffs import ClassicPayoff, DiPayoff, PayoffError, evaluate, realised_leg, step_values
from .simulate import ModelKind, ModelSpec, Partition, map_blocks
from .swaps import snapshot_arrays


@dataclass(frozen=True)
class Snapshot:
    """Prices ``F``, residual second moments ``Sigma = E_t[F_T F_T']`` and log contracts ``X = E_t[ln F_T]``.

    Arrays may carry leading batch axes (paths, times); the components sit on
    the last axis (last two for ``Sigma``).
    """

    F: np.ndarray
    Sigma: np.ndarray
    X: np.ndarray

    @property
    def x(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.F > 0, np.log(np.where(self.F > 0, self.F, 1.0)), np.nan)

    def at(self, *idx) -> "Snapshot":
        return Snapshot(self.F[idx], self.Sigma[idx], self.X[idx])


def _masked_trace(omega, M):
    nz = omega != 0
    if not np.any(nz):
        return np.zeros(M.shape[:-2])
    sub = M[..., nz]
    if np.any(~np.isfinite(sub)):
        raise PayoffError("second moments unavailable for a component pair the pay-off needs")
    return sub @ omega[nz]


def _masked_dot(vec, A):
    nz = vec != 0
    if not np.any(nz):
        return np.zeros(A.shape[:-1])
    sub = A[..., nz]
    if np.any(~np.isfinite(sub)):
        raise PayoffError("log contracts unavailable for a component the pay-off needs")
    return sub @ vec[nz]


def residual_rate(payoff: DiPayoff, snap: Snapshot):
    """Fair rate ``v_t`` of the residual swap, from the same formula as the inception rate."""
    F = snap.F
    M = snap.Sigma - F[..., :, None] * F[..., None, :]
    out = _masked_trace(payoff.omega, M)
    nz = payoff.gamma != 0
    if np.any(nz):
        out = out + _masked_dot(payoff.gamma, snap.X - snap.x)
    return out


def value_increment(payoff: DiPayoff, prev: Snapshot, curr: Snapshot):
    """``alpha' F_hat + tr(Omega [Sigma_hat - 2 F_prev F_hat']) + beta' (exp(x_hat) - 1) + gamma' X_hat``."""
    if prev.F.shape[-1] != payoff.dim or curr.F.shape[-1] != payoff.dim:
        raise PayoffError("snapshot dimension does not match the pay-off")
    F_hat = curr.F - prev.F
    out = F_hat @ payoff.alpha
    if np.any(payoff.omega != 0):
        out = out + _masked_trace(payoff.omega, curr.Sigma - prev.Sigma)
        out = out - 2.0 * np.einsum("...i,ij,...j->...", prev.F, payoff.omega, F_hat)
    if np.any(payoff.beta != 0):
        out = out + np.expm1(curr.x - prev.x) @ payoff.beta
    if np.any(payoff.gamma != 0):
        out = out + _masked_dot(payoff.gamma, curr.X - prev.X)
    return out


def decompose(payoff: DiPayoff, prev: Snapshot, curr: Snapshot) -> dict:
    """Split a value increment into the monitored pay-off and the change in the residual rate."""
    x_hat = curr.x - prev.x if payoff.uses_logs else None
    realised = evaluate(payoff, curr.F - prev.F, x_hat)
    implied = residual_rate(payoff, curr) - residual_rate(payoff, prev)
    return {"realised": realised, "implied": implied}


# --- hedge portfolios -----------------------------------------------------------


def hedge_holdings(payoff: DiPayoff, prev: Snapshot) -> dict:
    """Holdings over one step that replicate the value increment.

    ``dynamic``: units of each component ``F_j`` (``alpha + beta/F_prev - 2 Omega F_prev``);
    ``static_sigma``: units of the claims paying ``F_i F_j`` at expiry (``Omega``);
    ``static_log``: units of log contracts on each component (``gamma``).
    The beta leg uses ``exp(x_hat) - 1 = F_hat / F_prev``.
    """
    F = prev.F
    dyn = payoff.alpha - 2.0 * F @ payoff.omega
    nz = payoff.beta != 0
    if np.any(nz):
        dyn = dyn + np.where(nz, payoff.beta / np.where(nz, F, 1.0), 0.0)
    return {"dynamic": dyn, "static_sigma": payoff.omega, "static_log": payoff.gamma}


def hedge_increment(payoff: DiPayoff, prev: Snapshot, curr: Snapshot):
    """Gain of the hedge portfolio held over one step."""
    h = hedge_holdings(payoff, prev)
    out = np.sum(h["dynamic"] * (curr.F - prev.F), axis=-1)
    if np.any(payoff.omega != 0):
        out = out + _masked_trace(payoff.omega, curr.Sigma - prev.Sigma)
    if np.any(payoff.gamma != 0):
        out = out + _masked_dot(payoff.gamma, curr.X - prev.X)
    return out


@dataclass(frozen=True)
class MomentHedge:
    """``V_hat = X_hat^(n) - sum_i h_i X_hat^(i)``; ``positions`` maps labels to units held."""

    n: int
    h: dict
    positions: dict

    def increment(self, powers_hat: Sequence) -> float:
        """Hedge gain given increments ``(X_hat, X_hat^(2), ..., X_hat^(n))``."""
        return sum(self.positions[_plabel(i)] * powers_hat[i - 1] for i in range(1, self.n + 1))


def _plabel(i: int) -> str:
    return "X" if i == 1 else f"X{i}"


def moment_hedge_ratios(n: int, X0: float, prev_powers: Sequence) -> MomentHedge:
    """Model-free hedge ratios for the second, third and fourth moment swaps.

    ``prev_powers`` is ``(X_{t-1}, X_{t-1}^(2), X_{t-1}^(3))`` (trailing entries
    may be omitted when ``n`` does not need them).
    """
    p = list(prev_powers) + [np.nan] * 3
    X1, X2, X3 = p[0], p[1], p[2]
    if n == 2:
        h = {1: 2.0 * X1}
    elif n == 3:
        h = {2: 2.0 * X0 + X1, 1: X2 - 4.0 * X0 * X1}
    elif n == 4:
        h = {3: 3.0 * X0 + X1, 2: -3.0 * X0**2 - 3.0 * X0 * X1, 1: X3 - 3.0 * X0 * X2 + 6.0 * X0**2 * X1}
    else:
        raise ValueError(f"hedge ratios are tabulated for n in (2, 3, 4), not {n}")
    positions = {_plabel(n): 1.0}
    for i, hi in h.items():
        positions[_plabel(i)] = -hi
    return MomentHedge(n, h, positions)


def straddle_hedge_increment(P_prev, C_prev, P_hat, C_hat):
    """Hold ``P_prev`` calls short and ``C_prev`` puts short: ``-P_prev C_hat - C_prev P_hat``."""
    return -P_prev * C_hat - C_prev * P_hat


def frequency_mtm(payoff, levels, fine: Partition, coarse: Partition, t: float, logs=None) -> np.ndarray:
    """Mark-to-market at ``t`` of receiving the leg monitored on ``fine`` against ``coarse``.

    ``levels`` are component paths observed on ``fine`` (``[..., time, d]``).
    """
    if not coarse.is_subset_of(fine):
        raise ValueError("the coarse partition must be nested in the fine one")
    hit = np.nonzero(np.abs(coarse.times - t) <= 1e-12 * max(1.0, coarse.T))[0]
    if hit.size == 0:
        raise ValueError(f"t={t} is not a monitoring time of the coarse partition")
    j = int(np.nonzero(np.abs(fine.times - t) <= 1e-12 * max(1.0, fine.T))[0][0])
    levels = np.asarray(levels, dtype=float)
    idx = coarse.indices_in(fine)
    idx = idx[idx <= j]
    axis = -1 if isinstance(payoff, ClassicPayoff) else -2
    fine_lv = np.take(levels, np.arange(j + 1), axis=axis)
    coarse_lv = np.take(levels, idx, axis=axis)
    fl = cl = None
    if logs is not None:
        logs = np.asarray(logs, dtype=float)
        fl = np.take(logs, np.arange(j + 1), axis=axis)
        cl = np.take(logs, idx, axis=axis)
    if j == 0:
        return np.zeros(levels.shape[: axis + levels.ndim])
    return realised_leg(payoff, fine_lv, fl) - realised_leg(payoff, coarse_lv, cl)


def constant_maturity_increments(value_increments, times, maturity: float, target: float):
    """Rescale value increments of a fixed-expiry swap to a constant time to run.

    A step starting with ``tau`` years left is scaled by ``target / tau``; the
    conversion acts on changes in swap value, never on rates.
    """
    dv = np.asarray(value_increments, dtype=float)
    times = np.asarray(times, dtype=float)
    tau = maturity - times[:-1]
    if np.any(tau <= 0):
        raise ValueError("increments must start before maturity")
    if dv.shape[-1] != tau.size:
        raise ValueError("need one increment per step")
    return dv * (target / tau)


# --- path runs --------------------------------------------------------------------


def panel_snapshots(model: ModelSpec, labels: Sequence[str], x, times, T: float, v=None) -> Snapshot:
    """Analytic snapshots along paths of ``x = ln F`` observed at ``times``."""
    tau = np.maximum(T - np.asarray(times, dtype=float), 0.0)
    tau = np.broadcast_to(tau, np.shape(x))
    F, S, X = snapshot_arrays(model, labels, x, tau, v)
    return Snapshot(F, S, X)


@dataclass
class HedgeReport:
    times: Partition
    value_path: np.ndarray
    realised_component: np.ndarray
    implied_component: np.ndarray
    hedge_positions: np.ndarray
    residual: np.ndarray
    v0: float
    n_paths: int
    terminal_pnl: np.ndarray = field(repr=False)
    max_abs_step_error: float = 0.0
    terminal_identity_error: float = 0.0
    position_labels: tuple = ()

    def summary(self) -> dict:
        pnl = self.terminal_pnl
        return {
            "n_paths": self.n_paths,
            "v0": self.v0,
            "max_abs_residual": float(np.max(np.abs(self.residual))),
            "max_abs_step_error": self.max_abs_step_error,
            "terminal_identity_error": self.terminal_identity_error,
            "terminal_pnl_mean": float(np.mean(pnl)),
            "terminal_pnl_sd": float(np.std(pnl, ddof=1)) if pnl.size > 1 else 0.0,
            "terminal_pnl_se": float(np.std(pnl, ddof=1) / math.sqrt(pnl.size)) if pnl.size > 1 else 0.0,
        }


def _hedge_block(payoff: DiPayoff, T: float, panel):
    snaps = panel_snapshots(panel.model, payoff.labels, panel.x, panel.partition.times, T, panel.aux.get("_v"))
    prev = snaps.at(slice(None), slice(None, -1))
    curr = snaps.at(slice(None), slice(1, None))
    dv = value_increment(payoff, prev, curr)
    parts = decompose(payoff, prev, curr)
    hedge = hedge_increment(payoff, prev, curr)
    dyn = hedge_holdings(payoff, prev)["dynamic"]
    v = residual_rate(payoff, snaps)
    leg = realised_leg(payoff, snaps.F, snaps.x if payoff.uses_logs else None)
    return dv, parts["realised"], parts["implied"], hedge, dyn, v, leg


def hedge_run(payoff: DiPayoff, model: ModelSpec, partition: Partition, n_paths: int, seed: int,
              threads: int | None = None) -> HedgeReport:
    """Simulate, mark and hedge a swap along ``partition`` with analytic states.

    Value, realised and implied series are cross-path means per monitoring
    time; ``residual`` is the worst path at each time and the positions are
    those of the first path.
    """
    if model.kind is ModelKind.Heston and np.any(payoff.omega != 0):
        raise PayoffError("Heston states carry no second moments; use a pay-off without Omega")
    T = partition.T
    blocks = map_blocks(lambda p: _hedge_block(payoff, T, p), model, partition, n_paths, seed, threads)
    dv, real, imp, hedge, dyn, v, leg = (np.concatenate(z) for z in zip(*blocks))
    v0 = float(v[0, 0])
    value = np.concatenate([np.zeros((dv.shape[0], 1)), np.cumsum(dv, axis=1)], axis=1)
    port = np.concatenate([np.zeros((dv.shape[0], 1)), np.cumsum(hedge, axis=1)], axis=1)
    real_c = np.concatenate([np.zeros((dv.shape[0], 1)), np.cumsum(real, axis=1)], axis=1)
    imp_c = np.concatenate([np.zeros((dv.shape[0], 1)), np.cumsum(imp, axis=1)], axis=1)
    resid = value - port
    term_err = np.max(np.abs(value[:, -1] - (leg - v0)))
    return HedgeReport(
        times=partition,
        value_path=value.mean(axis=0),
        realised_component=real_c.mean(axis=0),
        implied_component=imp_c.mean(axis=0),
        hedge_positions=dyn[0],
        residual=resid[np.argmax(np.abs(resid), axis=0), np.arange(resid.shape[1])],
        v0=v0,
        n_paths=n_paths,
        terminal_pnl=value[:, -1],
        max_abs_step_error=float(np.max(np.abs(dv - hedge))),
        terminal_identity_error=float(term_err),
        position_labels=payoff.labels,
    )
