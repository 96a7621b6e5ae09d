"""Command-line experiment runner: one subcommand per figure, CSV out.

Every subcommand sweeps one axis with the figure's fixed parameters as
defaults.  Option precedence is command line > ``--config`` file > default.
Output is a headered CSV (one row per swept value, metric and policy) and
is byte-identical for a fixed ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from collections import defaultdict

import numpy as np

from . import analysis
from .multipath import MultipathConfig, replicate_multipath
from .sim import SimConfig, estimate, replicate, run

log = logging.getLogger("streamsched")

SINGLE_POLICIES = ("arq", "block", "fec", "policy_p")
COLUMNS = ["sweep", "value", "metric", "policy", "mean", "ci95_low", "ci95_high", "n_reps"]


class UsageError(Exception):
    pass


# -- value parsing ---------------------------------------------------------------------


def float_list(text: str) -> list[float]:
    """``"0.1,0.2"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, c = (float(x) for x in text.split(":"))
            if c <= 0:
                raise ValueError
            n = int(math.floor((b - a) / c + 1e-9)) + 1
            return [round(a + i * c, 10) for i in range(n)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def int_list(text: str) -> list[int]:
    vals = float_list(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}")
    return [int(v) for v in vals]


def name_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def read_config(path: str) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = val
    return out


# -- subcommand table --------------------------------------------------------------------
# name -> (help, {option: (type, default)})

COMMON = {
    "slots": (int, 10_000),
    "reps": (int, 100),
    "seed": (int, 0),
    "workers": (int, 1),
}

COMMANDS = {
    "delay_vs_feedback": ("end-to-end delay vs feedback delay for ARQ and the coding schemes", {
        "p": (float, 0.2), "a": (float, 0.7), "gamma": (float, 1.0), "d": (int_list, "0:100:10"),
        "block_k": (int, 50), "policies": (name_list, "arq,block,fec,policy_p")}),
    "rate_vs_epsilon": ("achieved information rate as arrivals approach capacity", {
        "p": (float, 0.2), "d": (int, 100), "gamma": (float, 1.0), "block_k": (int, 50),
        "eps": (float_list, "0.01,0.02,0.05,0.1,0.15,0.2"),
        "policies": (name_list, "arq,block,fec,policy_p")}),
    "gamma_sweep": ("delay vs load for several thresholds", {
        "p": (float, 0.2), "d": (int, 100), "gamma": (float_list, "0,1,2,5,10"),
        "a": (float_list, "0.3,0.4,0.5,0.6,0.7,0.75")}),
    "delay_vs_load": ("delay vs capacity gap for ARQ and the queue-weighted variant", {
        "p": (float, 0.1), "d": (int, 0), "rho": (float_list, "0,0.1,0.5,1"),
        "eps": (float_list, "0.05,0.1,0.2,0.3,0.4")}),
    "bounds": ("observed estimator error against both error bounds", {
        "p": (float, 0.6), "a": (float, 0.36), "q": (float, 0.9), "gamma": (float, 1.0),
        "d": (int_list, "1,2,5,10,20,50,100")}),
    "dummy_rate": ("measured and predicted redundant-coded-packet rate", {
        "p": (float, 0.1), "a": (float, 0.9), "gamma": (float, 1.0), "d": (int_list, "1:100:1")}),
    "queue_delay_scatter": ("mean sender and receiver delay per queue occupancy", {
        "p": (float, 0.2), "a": (float, 0.7), "d": (int, 0), "policies": (name_list, "fec")}),
    "multipath_throughput": ("per-flow and aggregate rate over three paths", {
        "p": (float, 0.1), "p1": (float_list, "0,0.1,0.2,0.3,0.4"), "a": (float, 1.0),
        "d": (int, 10), "alpha": (float, 1.0), "flows": (int, 3), "paths": (int, 3)}),
    "multipath_delay": ("delay vs feedback delay, proposed scheduler vs round-robin ARQ", {
        "p": (float, 0.2), "a": (float, 0.7), "alpha": (float, 1.0), "d": (int_list, "0:100:20"),
        "flows": (int, 3), "paths": (int, 3), "policies": (name_list, "dual,rr_arq")}),
}

# figure-specific overrides of the common defaults
COMMON_OVERRIDES = {
    "queue_delay_scatter": {"reps": 100},
    "multipath_throughput": {"slots": 100_000, "reps": 5},
    "multipath_delay": {"slots": 100_000, "reps": 5},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamsched", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, (help_text, opts) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        defaults = {**{k: v for k, (_, v) in COMMON.items()}, **COMMON_OVERRIDES.get(name, {})}
        for opt, (typ, default) in {**COMMON, **opts}.items():
            default = defaults.get(opt, default)
            # default=None marks "not given" so a config file can fill it in
            sp.add_argument(f"--{opt.replace('_', '-')}", dest=opt, type=typ, default=None,
                            help=f"default: {default}")
        sp.add_argument("--out", default="-", help="CSV path, '-' for stdout (default)")
        sp.add_argument("--config", help="file of 'key = value' lines mirroring the options")
    return parser


def resolve(ns: argparse.Namespace) -> dict:
    """Merge command line, config file and defaults for the chosen command."""
    _, opts = COMMANDS[ns.command]
    table = {**COMMON, **opts}
    defaults = {**{k: v for k, (_, v) in COMMON.items()}, **COMMON_OVERRIDES.get(ns.command, {})}
    cfg = read_config(ns.config) if ns.config else {}
    unknown = set(cfg) - set(table) - {"out"}
    if unknown:
        raise UsageError(f"unknown config keys for {ns.command}: {', '.join(sorted(unknown))}")
    out = {}
    for key, (typ, default) in table.items():
        val = getattr(ns, key)
        if val is None and key in cfg:
            try:
                val = typ(cfg[key])
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"config value for {key}: {e}") from None
        if val is None:
            default = defaults.get(key, default)
            val = typ(default) if isinstance(default, str) else default
        out[key] = val
    out["out"] = ns.out if ns.out != "-" or "out" not in cfg else cfg["out"]
    if out["reps"] < 1 or out["slots"] < 1 or out["workers"] < 1:
        raise UsageError("--reps, --slots and --workers must be >= 1")
    return out


# -- experiments ---------------------------------------------------------------------------


def _rows_from(sweep, value, policy, summary, metrics):
    for m in metrics:
        e = summary[m]
        yield [sweep, value, m, policy, e.mean, e.ci_low, e.ci_high, e.n]


def _summary(cfg: SimConfig, o: dict) -> dict:
    if o["reps"] >= 2:
        s, _ = replicate(cfg, o["reps"], workers=o["workers"])
        return s
    m = run(cfg)
    return {k: estimate([getattr(m, k)]) for k in m.SCALARS}


def _check_policies(policies, allowed):
    bad = [p for p in policies if p not in allowed]
    if bad or not policies:
        raise UsageError(f"invalid policy {', '.join(bad) or '(none)'}; choose from {', '.join(allowed)}")


def cmd_delay_vs_feedback(o):
    _check_policies(o["policies"], SINGLE_POLICIES)
    for d in o["d"]:
        if d < 0:
            raise UsageError("feedback delay must be >= 0")
    for d in o["d"]:
        for pol in o["policies"]:
            log.info("d=%s policy=%s", d, pol)
            cfg = SimConfig(p=o["p"], a_bar=o["a"], d=d, horizon=o["slots"], seed=o["seed"],
                            policy=pol, gamma=o["gamma"], block_k=o["block_k"])
            yield from _rows_from("d", d, pol, _summary(cfg, o),
                                  ("mean_delay", "mean_dqt", "mean_dqr", "stranded"))


def cmd_rate_vs_epsilon(o):
    _check_policies(o["policies"], SINGLE_POLICIES)
    if any(e <= 0 for e in o["eps"]):
        raise UsageError("epsilon must be > 0 (epsilon = 0 is the capacity boundary)")
    if any(e > 1 - o["p"] for e in o["eps"]):
        raise UsageError("epsilon must not exceed 1 - p")
    for eps in o["eps"]:
        for pol in o["policies"]:
            log.info("eps=%s policy=%s", eps, pol)
            cfg = SimConfig(p=o["p"], a_bar=1 - o["p"] - eps, d=o["d"], horizon=o["slots"],
                            seed=o["seed"], policy=pol, gamma=o["gamma"], block_k=o["block_k"])
            yield from _rows_from("eps", eps, pol, _summary(cfg, o), ("s_bar", "goodput", "s_hat"))


def cmd_gamma_sweep(o):
    for a in o["a"]:
        for g in o["gamma"]:
            cfg = SimConfig(p=o["p"], a_bar=a, d=o["d"], horizon=o["slots"], seed=o["seed"],
                            policy="policy_p", gamma=g)
            yield from _rows_from("a", a, f"policy_p_gamma={g:g}", _summary(cfg, o),
                                  ("mean_delay", "max_qr"))


def cmd_delay_vs_load(o):
    if any(e <= 0 for e in o["eps"]):
        raise UsageError("epsilon must be > 0")
    for eps in o["eps"]:
        base = dict(p=o["p"], a_bar=1 - o["p"] - eps, d=o["d"], horizon=o["slots"], seed=o["seed"])
        yield from _rows_from("eps", eps, "arq", _summary(SimConfig(policy="arq", **base), o),
                              ("mean_delay",))
        for rho in o["rho"]:
            cfg = SimConfig(policy="weighted", rho=rho, **base)
            yield from _rows_from("eps", eps, f"weighted_rho={rho:g}", _summary(cfg, o),
                                  ("mean_delay",))


def cmd_bounds(o):
    if not 0 < o["q"] < 1:
        raise UsageError("q must be in (0, 1)")
    for d in o["d"]:
        maxes, within = [], []
        for r in range(o["reps"]):
            cfg = SimConfig(p=o["p"], a_bar=o["a"], d=d, horizon=o["slots"],
                            seed=o["seed"], gamma=o["gamma"], keep_traces=True)
            m = run(cfg, seed=np.random.SeedSequence(o["seed"]).spawn(o["reps"])[r])
            rep = analysis.check_estimator_error(m.trace.qr, m.trace.q_hat, o["p"], d, o["q"])
            maxes.append(rep.observed)
            within.append(rep.extra.get("within_fraction", 1.0))
        for metric, vals in (("observed_max_error", maxes), ("hoeffding_coverage", within)):
            e = estimate(vals)
            yield ["d", d, metric, "policy_p", e.mean, e.ci_low, e.ci_high, e.n]
        for metric, v in (("worst_case_delta", analysis.worst_case_delta(o["p"], d)),
                          ("hoeffding_delta", analysis.hoeffding_delta(o["p"], d, o["q"]))):
            yield ["d", d, metric, "analytic", v, v, v, 0]


def cmd_dummy_rate(o):
    for d in o["d"]:
        if d < 1:
            raise UsageError("d must be >= 1 for the redundancy estimate")
    for d in o["d"]:
        cfg = SimConfig(p=o["p"], a_bar=o["a"], d=d, horizon=o["slots"], seed=o["seed"],
                        gamma=o["gamma"])
        yield from _rows_from("d", d, "policy_p", _summary(cfg, o), ("r_bar",))
        r_hat = analysis.redundancy_estimate(o["p"], o["a"], d)
        yield ["d", d, "r_hat", "analytic", r_hat, r_hat, r_hat, 0]


def cmd_queue_delay_scatter(o):
    _check_policies(o["policies"], SINGLE_POLICIES)
    for pol in o["policies"]:
        by_qt, by_qr = defaultdict(list), defaultdict(list)
        seeds = np.random.SeedSequence(o["seed"]).spawn(o["reps"])
        for ss in seeds:
            cfg = SimConfig(p=o["p"], a_bar=o["a"], d=o["d"], horizon=o["slots"], policy=pol,
                            keep_traces=True)
            tr = run(cfg, seed=ss).trace
            ok = tr.delivery_slot >= 0
            arr, tx, dl = tr.arrival_slot[ok], tr.tx_slot[ok], tr.delivery_slot[ok]
            # occupancy seen by the packet: sender queue on arrival,
            # receiver queue when it is first sent
            qt_seen, qr_seen = tr.qt[arr], tr.qr[tx]
            for q in np.unique(qt_seen):
                by_qt[int(q)].append(float(np.mean((tx - arr)[qt_seen == q])))
            for q in np.unique(qr_seen):
                by_qr[int(q)].append(float(np.mean((dl - tx)[qr_seen == q])))
        for label, table in (("qt", by_qt), ("qr", by_qr)):
            for q in sorted(table):
                e = estimate(table[q])
                yield [label, q, "mean_dqt" if label == "qt" else "mean_dqr", pol,
                       e.mean, e.ci_low, e.ci_high, e.n]


def _mp_summary(cfg, o):
    if o["reps"] >= 2:
        s, _ = replicate_multipath(cfg, o["reps"], workers=o["workers"])
        return s
    from .multipath import run_multipath
    m = run_multipath(cfg)
    s = {k: estimate([getattr(m, k)]) for k in m.SCALARS}
    for f, r in enumerate(m.flow_rates):
        s[f"flow{f}_rate"] = estimate([r])
    return s


def cmd_multipath_throughput(o):
    if o["paths"] < 1 or o["flows"] < 1:
        raise UsageError("need at least one path and one flow")
    for p1 in o["p1"]:
        paths = (p1,) + (o["p"],) * (o["paths"] - 1)
        cfg = MultipathConfig(p_paths=paths, a_flows=(o["a"],) * o["flows"], d=o["d"],
                              alpha=o["alpha"], horizon=o["slots"], seed=o["seed"])
        s = _mp_summary(cfg, o)
        names = ["aggregate_rate"] + [f"flow{f}_rate" for f in range(o["flows"])]
        yield from _rows_from("p1", p1, "dual", s, names)
        cap = sum(1 - p for p in paths)
        yield ["p1", p1, "capacity", "analytic", cap, cap, cap, 0]


def cmd_multipath_delay(o):
    _check_policies(o["policies"], ("dual", "rr_arq"))
    for d in o["d"]:
        for sch in o["policies"]:
            cfg = MultipathConfig(p_paths=(o["p"],) * o["paths"], a_flows=(o["a"],) * o["flows"],
                                  d=d, alpha=o["alpha"], horizon=o["slots"], seed=o["seed"],
                                  scheduler=sch)
            yield from _rows_from("d", d, sch, _mp_summary(cfg, o), ("mean_delay", "aggregate_rate"))


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# -- output -----------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".10g")
    return str(v)


def write_csv(rows, command: str, opts: dict, fh) -> None:
    shown = ", ".join(f"{k}={_fmt(v) if not isinstance(v, list) else ';'.join(map(_fmt, v))}"
                      for k, v in sorted(opts.items()) if k not in ("out", "workers"))
    fh.write(f"# streamsched {command}: {shown}\n")
    fh.write("# ci95: normal approximation, mean +- 1.96 * sd / sqrt(n) over replications\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        opts = resolve(ns)
        # build everything before touching the output file
        buf = io.StringIO()
        write_csv(HANDLERS[ns.command](opts), ns.command, opts, buf)
    except (UsageError, OSError) as e:
        parser.error(str(e))
    except ValueError as e:
        parser.error(f"invalid parameters: {e}")
    if opts["out"] == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(opts["out"], "w", newline="") as fh:
            fh.write(buf.getvalue())
    return 0


if __name__ == "__main__":
    sys.exit(main())
