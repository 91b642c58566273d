"""Command-line front end: ``diswaps <command> [flags]``.

Exit codes: 0 success, 2 verification failure, 1 usage or data error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import hedging, payoffs, replication, simulate, swaps, verify
from .payoffs import ClassicPayoff, ClassicPayoffKind, DiPayoff, MomentShorthand, PayoffError
from .simulate import HestonParams, JumpParams, ModelKind, ModelSpec, SimulationError

OUT_ENV = "DISWAPS_OUT"
STOCHASTIC = {"hedge", "verify-ap", "delta", "premium"}


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- artifacts ---------------------------------------------------------------------


def atomic_write(path: str | Path, data: str | bytes) -> Path:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    # JSON has no inf/nan; report them as strings
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return atomic_write(path, buf.getvalue())


# --- parser ------------------------------------------------------------------------------


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=["gbm", "merton", "heston"], default="gbm", help="forward price model")
    g.add_argument("--f0", type=float, default=100.0, help="initial forward price")
    g.add_argument("--sigma", type=float, default=0.2, help="annualised volatility")
    g.add_argument("--drift", type=float, default=0.0, help="physical drift (0 under the pricing measure)")
    g.add_argument("--maturity", type=float, default=1.0, help="swap maturity T in years")
    g.add_argument("--jump-intensity", type=float, default=1.0, help="Merton jump intensity")
    g.add_argument("--jump-mean", type=float, default=-0.1, help="Merton mean log jump")
    g.add_argument("--jump-sd", type=float, default=0.15, help="Merton log jump sd")
    g.add_argument("--heston-kappa", type=float, default=2.0)
    g.add_argument("--heston-theta", type=float, default=0.04)
    g.add_argument("--heston-xi", type=float, default=0.3)
    g.add_argument("--heston-rho", type=float, default=-0.7)
    g.add_argument("--heston-v0", type=float, default=0.04)


def _add_common(p, stochastic: bool):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or the working directory)")
    p.add_argument("--output", help="main artifact path (default <out>/<command>.json)")
    if stochastic:
        p.add_argument("--seed", type=int, help="random seed (required)")
        p.add_argument("--paths", type=int, default=10000, help="number of simulated paths")
        p.add_argument("--threads", type=int, default=None, help="worker cap (default: available cores)")


def _add_payoff(p, required=True):
    p.add_argument("--payoff", required=False,
                   help="JSON file, inline JSON, or shorthand: lv | moment:<n> | straddle:<k1>[,<k2>...] | classic:<kind>")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diswaps", description="Discretisation-invariant swaps: pricing, hedging and verification.",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("price", help="fair swap rate from an option chain or a model", allow_abbrev=False)
    _add_common(p, False)
    _add_payoff(p)
    p.add_argument("--state", default="black76",
                   help="chain CSV path, 'black76' (synthesise from chain flags) or 'model' (analytic)")
    p.add_argument("--tau", type=float, default=None, help="chain time to expiry (default --maturity)")
    p.add_argument("--strikes", type=int, default=4096, help="number of synthetic strikes")
    p.add_argument("--width", type=float, default=10.0, help="strike range half-width in sigma*sqrt(tau)")
    _add_model(p)

    p = sub.add_parser("chain-gen", help="write a synthetic option chain CSV", allow_abbrev=False)
    _add_common(p, False)
    p.add_argument("--tau", type=float, default=None, help="time to expiry (default --maturity)")
    p.add_argument("--strikes", type=int, default=4096)
    p.add_argument("--width", type=float, default=10.0)
    _add_model(p)

    p = sub.add_parser("hedge", help="simulate, mark and hedge a swap", allow_abbrev=False)
    _add_common(p, True)
    _add_payoff(p)
    p.add_argument("--partition", default="daily", help="monitoring partition")
    p.add_argument("--series", help="per-time CSV path (default <out>/hedge_series.csv)")
    p.add_argument("--export-panel", help="also write the simulated panel (.bin for binary, else CSV)")
    _add_model(p)

    p = sub.add_parser("verify-ap", help="paired Monte Carlo test of the aggregation property", allow_abbrev=False)
    _add_common(p, True)
    _add_payoff(p)
    p.add_argument("--partitions", default="1,12,52,252,irregular:7", help="comma-separated partitions")
    p.add_argument("--z", type=float, default=verify.DEFAULT_Z, help="z-score threshold")
    _add_model(p)

    p = sub.add_parser("residual", help="invariance PDE residual of a candidate pay-off", allow_abbrev=False)
    _add_common(p, False)
    _add_payoff(p)
    p.add_argument("--points", default="grid", help="'grid' or 'random:<n>[:<seed>]'")
    p.add_argument("--mode", choices=["auto", "analytic", "fd"], default="auto")
    p.add_argument("--h", type=float, default=verify.FD_STEP, help="finite-difference step")
    p.add_argument("--tol", type=float, default=None, help="pass tolerance on the max Frobenius norm")

    p = sub.add_parser("delta", help="discrete monitoring error against a refined partition", allow_abbrev=False)
    _add_common(p, True)
    _add_payoff(p)
    p.add_argument("--partition", default="1")
    p.add_argument("--fine-factor", type=int, default=verify.DEFAULT_FINE_FACTOR)
    _add_model(p)

    p = sub.add_parser("premium", help="physical-measure premium of a swap", allow_abbrev=False)
    _add_common(p, True)
    _add_payoff(p)
    p.add_argument("--partition", default="monthly")
    p.add_argument("--series", help="decomposition CSV path (default <out>/premium_series.csv)")
    _add_model(p)
    return parser


# --- config handling ---------------------------------------------------------------------


def read_config(path: str) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"config {path}:{n}: expected key=value")
                k, v = line.split("=", 1)
                out[k.strip().replace("-", "_")] = v.strip()
    except OSError as e:
        raise UsageError(f"config: cannot read {path}: {e.strerror}") from None
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required (see --help)")
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        for k in cfg:
            if k not in known:
                raise UsageError(f"config: unknown key {k!r} for {args.command}")
        explicit = _explicit_dests(sub, argv)
        for k, v in cfg.items():
            if k in explicit:
                continue
            a = known[k]
            try:
                val = a.type(v) if a.type else v
            except ValueError:
                raise UsageError(f"config: bad value for {k}: {v!r}") from None
            if a.choices and val not in a.choices:
                raise UsageError(f"config: {k} must be one of {list(a.choices)}")
            setattr(args, k, val)
    return args


def _explicit_dests(sub, argv) -> set:
    flags = {}
    for a in sub._actions:
        for s in a.option_strings:
            flags[s] = a.dest
    out = set()
    for tok in argv:
        key = tok.split("=", 1)[0]
        if key in flags:
            out.add(flags[key])
    return out


# --- building blocks -----------------------------------------------------------------------


def model_from_args(args) -> ModelSpec:
    kind = {"gbm": ModelKind.GBM, "merton": ModelKind.MertonJump, "heston": ModelKind.Heston}[args.model]
    jump = heston = None
    if kind is ModelKind.MertonJump:
        jump = JumpParams(args.jump_intensity, args.jump_mean, args.jump_sd)
    if kind is ModelKind.Heston:
        heston = HestonParams(args.heston_kappa, args.heston_theta, args.heston_xi, args.heston_rho, args.heston_v0)
    return ModelSpec(kind, args.f0, args.sigma, args.drift, jump, heston)


def payoff_from_arg(spec: str | None):
    if not spec:
        raise UsageError("missing required field: payoff")
    s = spec.strip()
    if s.startswith("{"):
        try:
            return payoffs.payoff_from_dict(json.loads(s))
        except json.JSONDecodeError as e:
            raise UsageError(f"payoff: invalid inline JSON ({e.msg})") from None
    if s == "lv":
        return payoffs.lv_payoff(("F",))
    if s.startswith("moment:"):
        return MomentShorthand(int(s.split(":", 1)[1]))
    if s.startswith("straddle:"):
        ks = [float(v) for v in s.split(":", 1)[1].split(",")]
        return payoffs.straddle_payoff(np.tril(np.ones((len(ks), len(ks)))), ks)
    if s.startswith("classic:"):
        try:
            return ClassicPayoff(ClassicPayoffKind(s.split(":", 1)[1]))
        except ValueError:
            kinds = [k.value for k in ClassicPayoffKind]
            raise UsageError(f"payoff: unknown classic kind; choose from {kinds}") from None
    if not os.path.exists(s):
        raise UsageError(f"payoff: no such file or shorthand {s!r}")
    try:
        return payoffs.load_payoff(s)
    except json.JSONDecodeError as e:
        raise UsageError(f"payoff: {s} is not valid JSON ({e.msg})") from None


def out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or ".")


def main_artifact(args, default_name: str) -> Path:
    return Path(args.output) if args.output else out_dir(args) / default_name


def _require_seed(args):
    if args.seed is None:
        raise UsageError("missing required field: seed")
    if args.paths < 1:
        raise UsageError("paths must be >= 1")


def _threads(args):
    cap = args.threads
    if cap is None:
        return os.cpu_count() or 1
    if cap < 1:
        raise UsageError("threads must be >= 1")
    return cap


def _partition(spec: str, T: float):
    return simulate.parse_partition("trivial" if spec.strip() == "1" else spec, T)


def _chain_strikes(args, tau, extra=()):
    grid = replication.default_grid(args.f0, args.sigma, tau, args.strikes, args.width)
    k = grid.strikes
    if extra:
        k = np.unique(np.concatenate([k, np.asarray(extra, dtype=float)]))
    return k


def _option_strikes(labels):
    return sorted({replication.parse_label(lab)[1] for lab in labels if replication.parse_label(lab)[0] in "PC"})


# --- commands ----------------------------------------------------------------------------


def cmd_price(args) -> tuple[str, int]:
    payoff = payoff_from_arg(args.payoff)
    if isinstance(payoff, ClassicPayoff):
        raise UsageError("payoff: classic pay-offs have no exact fair value; use premium or verify-ap")
    model = model_from_args(args)
    tau = args.tau if args.tau is not None else args.maturity
    n = payoff.n if isinstance(payoff, MomentShorthand) else None
    if args.state == "model":
        source = f"model:{model.label}"
        if n is not None:
            X0 = float(replication.conditional_log_moments(model, math.log(model.F0), tau, 1)[1])
            payoff = payoff.resolve(X0)
        state = swaps.state_from_model(model, payoff.labels, tau)
    else:
        if args.state == "black76":
            source = "black76"
            extra = _option_strikes(payoff.labels) if isinstance(payoff, DiPayoff) else ()
            chain = replication.black76_chain(args.f0, args.sigma, tau, strikes=_chain_strikes(args, tau, extra))
        else:
            source = args.state
            if not os.path.exists(args.state):
                raise UsageError(f"state: no such chain file {args.state!r}")
            chain = replication.read_chain_csv(args.state, tau)
        if n is not None:
            payoff = payoff.resolve(replication.power_log_price(chain, 1))
        state = swaps.state_from_chain(chain, payoff.labels)
    terms = swaps.fair_value_terms(payoff, state)
    fv = terms["quadratic_term"] + terms["log_term"]
    report = {"fair_value": fv, "components": terms, "payoff": payoff.to_dict(), "state": source, "tau": tau}
    path = write_json(main_artifact(args, "price.json"), report)
    return f"price {payoff.name or 'payoff'} fair_value={fv:.10g} state={source} -> {path}", 0


def cmd_chain_gen(args) -> tuple[str, int]:
    model = model_from_args(args)
    tau = args.tau if args.tau is not None else args.maturity
    strikes = _chain_strikes(args, tau)
    if model.kind is ModelKind.GBM:
        chain = replication.black76_chain(args.f0, args.sigma, tau, strikes=strikes)
    else:
        chain = replication.model_chain(model, args.f0, tau, strikes)
    path = Path(args.output) if args.output else out_dir(args) / "chain.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strike", "put", "call"])
    for k, p, c in zip(chain.strikes, chain.puts, chain.calls):
        w.writerow([repr(float(k)), repr(float(p)), repr(float(c))])
    atomic_write(path, buf.getvalue())
    return f"chain-gen {chain.strikes.size} strikes F={chain.F:g} tau={tau:g} parity_error={chain.parity_error():.2e} -> {path}", 0


def _resolve_for_model(payoff, model, T):
    return verify.resolve_payoff(payoff, model.risk_neutral(), T)


def cmd_hedge(args) -> tuple[str, int]:
    _require_seed(args)
    model = model_from_args(args)
    T = args.maturity
    payoff = _resolve_for_model(payoff_from_arg(args.payoff), model, T)
    if not isinstance(payoff, DiPayoff):
        raise UsageError("payoff: hedging needs a DI pay-off")
    part = _partition(args.partition, T)
    rep = hedging.hedge_run(payoff, model, part, args.paths, args.seed, _threads(args))
    series = Path(args.series) if args.series else out_dir(args) / "hedge_series.csv"
    rows = zip(part.times, rep.value_path, rep.realised_component, rep.implied_component, rep.residual)
    write_csv(series, ["time", "value", "realised", "implied", "residual"], rows)
    summary = rep.summary()
    summary.update({"payoff": payoff.name, "model": model.label, "partition": part.label, "seed": args.seed,
                    "series": series.name})
    if args.export_panel:
        panel = simulate.simulate_paths(model, part, min(args.paths, 1000), args.seed, _threads(args))
        replication.attach_components(panel, payoff.labels)
        tmp = Path(args.export_panel)
        writer = simulate.write_panel_binary if tmp.suffix == ".bin" else simulate.write_panel_csv
        fd, t = tempfile.mkstemp(dir=tmp.parent if str(tmp.parent) else ".", suffix=".tmp")
        os.close(fd)
        writer(panel, t)
        os.replace(t, tmp)
        summary["panel"] = str(tmp)
    path = write_json(main_artifact(args, "hedge.json"), summary)
    return (f"hedge {payoff.name} {model.label} {part.label} paths={args.paths} v0={rep.v0:.6g} "
            f"max|residual|={summary['max_abs_residual']:.2e} -> {path}"), 0


def cmd_verify_ap(args) -> tuple[str, int]:
    _require_seed(args)
    model = model_from_args(args)
    T = args.maturity
    payoff = payoff_from_arg(args.payoff)
    parts = [_partition(s, T) for s in args.partitions.split(",") if s.strip()]
    if not any(p.N == 1 for p in parts):
        parts.insert(0, _partition("1", T))
    v = verify.ap_check(payoff, model, parts, args.paths, args.seed, args.z, _threads(args))
    path = write_json(main_artifact(args, "verify_ap.json"), v.to_dict())
    print(v.table())
    verdict = "PASS" if v.passed else "FAIL"
    return f"verify-ap {v.payoff} {v.model} max|z|={v.max_abs_z:.2f} threshold={v.z_threshold:g} {verdict} -> {path}", (
        0 if v.passed else 2)


def _points(spec: str, d: int):
    if spec == "grid":
        return verify.grid_points(d)
    if spec.startswith("random:"):
        bits = spec.split(":")
        n = int(bits[1])
        seed = int(bits[2]) if len(bits) > 2 else 0
        return verify.random_points(np.random.default_rng(seed), d, n)
    raise UsageError(f"points: expected 'grid' or 'random:<n>[:<seed>]', got {spec!r}")


def cmd_residual(args) -> tuple[str, int]:
    payoff = payoff_from_arg(args.payoff)
    if isinstance(payoff, MomentShorthand):
        payoff = payoff.resolve(0.0)
    cand = verify.as_candidate(payoff)
    rep = verify.pde_residual(cand, verify.ZMap(tuple(getattr(payoff, "labels", ()))), _points(args.points, cand.d),
                              args.mode, args.h)
    tol = args.tol if args.tol is not None else (1e-10 if rep.mode == "analytic" else 1e-6)
    d = rep.to_dict()
    d["tol"] = tol
    d["passed"] = rep.max_frobenius <= tol
    path = write_json(main_artifact(args, "residual.json"), d)
    verdict = "PASS" if d["passed"] else "FAIL"
    return f"residual {rep.candidate} mode={rep.mode} max_frobenius={rep.max_frobenius:.3e} tol={tol:g} {verdict} -> {path}", (
        0 if d["passed"] else 2)


def cmd_delta(args) -> tuple[str, int]:
    _require_seed(args)
    model = model_from_args(args)
    payoff = payoff_from_arg(args.payoff)
    part = _partition(args.partition, args.maturity)
    est = verify.delta_n(payoff, model, part, args.paths, args.seed, args.fine_factor, _threads(args))
    d = est.to_dict()
    d.update({"payoff": verify.payoff_label(payoff), "model": model.label, "partition": part.label, "seed": args.seed})
    path = write_json(main_artifact(args, "delta.json"), d)
    return f"delta {d['payoff']} {part.label} x{args.fine_factor} mean={est.mean:.4e} se={est.se:.2e} -> {path}", 0


def cmd_premium(args) -> tuple[str, int]:
    _require_seed(args)
    model = model_from_args(args)
    payoff = payoff_from_arg(args.payoff)
    part = _partition(args.partition, args.maturity)
    rep = verify.premium_study(payoff, model, part, args.paths, args.seed, _threads(args))
    d = rep.to_dict()
    dec = d.pop("decomposition")
    d.update({"payoff": verify.payoff_label(payoff), "model": model.label, "partition": part.label, "seed": args.seed})
    if dec:
        series = Path(args.series) if args.series else out_dir(args) / "premium_series.csv"
        write_csv(series, ["time", "realised", "implied"], zip(dec["times"], dec["realised"], dec["implied"]))
        d["series"] = series.name
    path = write_json(main_artifact(args, "premium.json"), d)
    return (f"premium {d['payoff']} {model.label} {part.label} premium={rep.premium:.4e} se={rep.premium_se:.2e} "
            f"-> {path}"), 0


COMMANDS = {
    "price": cmd_price,
    "chain-gen": cmd_chain_gen,
    "hedge": cmd_hedge,
    "verify-ap": cmd_verify_ap,
    "residual": cmd_residual,
    "delta": cmd_delta,
    "premium": cmd_premium,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        line, code = COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"diswaps: error: {e}", file=sys.stderr)
        return 1
    except (PayoffError, SimulationError, replication.ChainError, swaps.StateError, verify.VerifyError,
            ValueError, KeyError, OSError) as e:
        print(f"diswaps: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(line)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
