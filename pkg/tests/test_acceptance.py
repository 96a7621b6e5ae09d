"""Acceptance criteria at full scale.

Each test prints one PASS/FAIL line (collected in the terminal summary) and
then asserts.  Nothing here is scaled down from the stated sizes.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from streamsched import analysis as an
from streamsched import expcli
from streamsched.codec import CodedPacket, Decoder, Encoder
from streamsched.multipath import MultipathConfig, replicate_multipath
from streamsched.sim import SimConfig, rep_seeds, replicate, run

pytestmark = pytest.mark.acceptance


def verdict(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# 1 -------------------------------------------------------------------------------


def ideal_trace(rng):
    n = int(rng.integers(1, 201))
    p = float(rng.uniform(0, 0.5))
    code_prob = float(rng.uniform(0, 0.5))
    enc, dec = Encoder(), Decoder("ideal")
    delivered, gains, erased, sent = [], 0, 0, 0
    while sent < n:
        enc.advance_window(dec.delivered_through)
        if enc.buffered and rng.random() < code_prob:
            pkt = enc.encode_coded(rng)
        else:
            pkt = enc.encode_info()
            sent += 1
        if rng.random() < p:
            erased += isinstance(pkt, CodedPacket) is False
            continue
        got, g = dec.receive(pkt)
        gains += bool(g) and isinstance(pkt, CodedPacket)
        delivered += [q.seq for q in got]
    covered = gains >= erased
    # top up until the received degrees of freedom cover the erasures
    while gains < erased:
        enc.advance_window(dec.delivered_through)
        got, g = dec.receive(enc.encode_coded(rng))
        gains += bool(g)
        delivered += [q.seq for q in got]
    ok = delivered == list(range(1, n + 1))
    # before the top-up, completeness is only promised when covered
    return ok, covered


def real_failures(rng, traces):
    needed = failed = 0
    for _ in range(traces):
        n = int(rng.integers(5, 120))
        enc, dec = Encoder(), Decoder("real")
        sent = 0
        while sent < n or dec.delivered_through < n:
            enc.advance_window(dec.delivered_through)
            if sent < n and (not enc.buffered or rng.random() < 0.7):
                pkt = enc.encode_info(rng.integers(0, 256, 8, dtype=np.uint8))
                sent += 1
            else:
                pkt = enc.encode_coded(rng)
            if rng.random() < 0.3:
                continue
            dec.receive(pkt)
        needed += dec.needed_coded
        failed += dec.dof_failures
    return failed, needed


def test_criterion_01_codec():
    t0 = time.time()
    rng = np.random.default_rng(1)
    bad = sum(not ideal_trace(rng)[0] for _ in range(10_000))
    failed, needed = real_failures(np.random.default_rng(2), 1000)
    elapsed = time.time() - t0
    rate = failed / needed
    p0 = 1 / 256
    limit = p0 + 3 * math.sqrt(p0 * (1 - p0) / needed)
    ok = bad == 0 and rate <= limit and elapsed < 60
    assert verdict(1, ok, f"ideal traces with gaps/incomplete={bad}/10000; real dof failure "
                          f"rate {rate:.5f} ({failed}/{needed}) <= {limit:.5f}; {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------------


def test_criterion_02_worst_case_estimator_bound():
    violations, worst = 0, 0.0
    for p in (0.1, 0.2, 0.6):
        for d in (1, 10, 100):
            cfg = SimConfig(p=p, a_bar=min(0.7, 0.9 * (1 - p)), d=d, horizon=100_000,
                            keep_traces=True)
            bound = an.worst_case_delta(p, d)
            for ss in rep_seeds(0, 100):
                tr = run(cfg, seed=ss).trace
                err = np.abs(tr.qr[:-1] - tr.q_hat)
                violations += int(np.sum(err > bound))
                worst = max(worst, float(err.max()) / bound)
    assert verdict(2, violations == 0, f"violations={violations} over 9 x 100 x 1e5 slots; "
                                       f"max error / bound = {worst:.3f}")


# 3 -------------------------------------------------------------------------------


def test_criterion_03_hoeffding_coverage():
    cfg = SimConfig(p=0.6, a_bar=0.36, d=100, horizon=100_000, keep_traces=True)
    tr = run(cfg).trace
    rep = an.check_estimator_error(tr.qr, tr.q_hat, 0.6, 100, 0.9)
    freq = rep.extra["within_fraction"]
    ordering = all(an.hoeffding_delta(0.6, d, 0.9) < an.worst_case_delta(0.6, d)
                   for d in range(2, 10_001))
    ok = freq >= 0.9 and ordering
    assert verdict(3, ok, f"within-delta frequency {freq:.4f} >= 0.9 "
                          f"(delta={rep.extra['hoeffding_delta']:.2f}); sharper for all d in 2..1e4: {ordering}")


# 4 -------------------------------------------------------------------------------


def test_criterion_04_queue_bound():
    bad = []
    for d in (0, 20):
        for gamma in (0, 1, 5):
            for p in (0.1, 0.2):
                delta = an.worst_case_delta(p, d)
                cfg = SimConfig(p=p, a_bar=1.0, d=d, gamma=gamma, horizon=100_000, keep_traces=True)
                for ss in rep_seeds(4, 100):
                    tr = run(cfg, seed=ss).trace
                    rep = an.check_theorem1(tr.qr, tr.q_hat, gamma, delta, d)
                    if not rep.satisfied:
                        bad.append((d, gamma, p, len(rep.violation_slots)))
    assert verdict(4, not bad, f"saturated, d in {{0, 20}}, gamma in {{0,1,5}}, p in {{0.1,0.2}}, "
                               f"100 x 1e5 slots each; violating runs: {bad or 'none'}")


# 5 -------------------------------------------------------------------------------


def test_criterion_05_redundancy_estimate():
    over_hat, over_5, nonzero_short = [], [], []
    worst = 0.0
    for a, p in ((0.9, 0.1), (0.8, 0.2), (0.6, 0.1)):
        for d in range(1, 101):
            s, _ = replicate(SimConfig(p=p, a_bar=a, d=d, gamma=1.0, horizon=10_000, seed=d), 100)
            r_bar = s["r_bar"].mean
            r_hat = an.redundancy_estimate(p, a, d)
            worst = max(worst, r_bar)
            if r_bar > r_hat + 0.02:
                over_hat.append((a, p, d, round(r_bar, 4), round(r_hat, 4)))
            if r_bar > 0.05:
                over_5.append((a, p, d, round(r_bar, 4)))
            if d < 1 / p and r_bar != 0:
                nonzero_short.append((a, p, d, r_bar))
    ok = not over_hat and not over_5 and not nonzero_short
    detail = (f"r_bar > r_hat+0.02 at {len(over_hat)} points; r_bar > 0.05 at {len(over_5)} points "
              f"(max {worst:.4f}, e.g. {over_5[:3]}); r_bar != 0 with d < 1/p at {len(nonzero_short)} points")
    assert verdict(5, ok, detail)


# 6 -------------------------------------------------------------------------------


def test_criterion_06_special_cases():
    mismatched = 0
    for ss in rep_seeds(6, 100):
        base = dict(p=0.2, a_bar=0.7, d=0, horizon=10_000, keep_traces=True)
        tp = run(SimConfig(policy="policy_p", gamma=1.0, **base), seed=ss).trace
        ta = run(SimConfig(policy="arq", **base), seed=ss).trace
        mismatched += not (np.array_equal(tp.S, ta.S) and np.array_equal(tp.C, ta.C))
    m = run(SimConfig(p=0.2, a_bar=0.7, d=None, gamma=1.0, horizon=1_000_000))
    frac = m.coded_sent / (m.coded_sent + m.info_sent)
    ok = mismatched == 0 and abs(frac - 0.2) <= 0.01
    assert verdict(6, ok, f"action mismatches vs ARQ: {mismatched}/100; no-feedback coded fraction "
                          f"{frac:.5f} (target 0.2 +- 0.01)")


# 7 -------------------------------------------------------------------------------

D_GRID = list(range(0, 101, 10))


def figure4():
    out = {}
    for pol in ("arq", "fec", "block", "policy_p"):
        for d in D_GRID:
            cfg = SimConfig(p=0.2, a_bar=0.7, d=d, gamma=1.0, block_k=50, horizon=10_000,
                            policy=pol, seed=7)
            out[pol, d] = replicate(cfg, 100)[0]["mean_delay"]
    return out


def test_criterion_07_delay_trends():
    r = figure4()
    arq = np.array([r["arq", d].mean for d in D_GRID])
    slope = np.polyfit(D_GRID, arq, 1)[0]
    increasing = bool(np.all(np.diff(arq) > 0)) and slope > 0
    coded = ("fec", "block", "policy_p")
    above = [all(r["arq", d].mean > r[c, d].mean for c in coded) for d in D_GRID]
    d_star = next((d for i, d in enumerate(D_GRID) if all(above[i:])), None)
    crossover = d_star is not None and 20 <= d_star <= 80
    p_ok = all(r["policy_p", d].mean <= min(r["arq", d].mean, r["fec", d].mean)
               + (r["policy_p", d].ci_high - r["policy_p", d].ci_low) for d in D_GRID)
    fec, block = r["fec", 0].mean, r["block", 0].mean
    ratio_ok = fec <= 0.65 * block
    ok = increasing and crossover and p_ok and ratio_ok
    table = "; ".join(f"d={d}: arq {r['arq', d].mean:.1f} fec {r['fec', d].mean:.1f} "
                      f"block {r['block', d].mean:.1f} P {r['policy_p', d].mean:.1f}"
                      for d in (0, 20, 40, 100))
    assert verdict(7, ok, f"ARQ increasing (slope {slope:.2f}): {increasing}; crossover d*={d_star} "
                          f"in [20,80]: {crossover}; P <= min(ARQ,FEC)+CI: {p_ok}; "
                          f"FEC/block = {fec / block:.2f} <= 0.65: {ratio_ok} [{table}]")


# 8 -------------------------------------------------------------------------------


def test_criterion_08_rate_near_capacity():
    res = {}
    for eps in (0.01, 0.1, 0.2):
        for pol in ("arq", "fec", "block", "policy_p"):
            cfg = SimConfig(p=0.2, a_bar=0.8 - eps, d=100, gamma=1.0, horizon=10_000, policy=pol,
                            seed=8)
            res[eps, pol] = replicate(cfg, 100)[0]["s_bar"]
    far = [(eps, pol) for eps in (0.1, 0.2) for pol in ("arq", "fec", "block", "policy_p")
           if not res[eps, pol].ci_low <= 0.8 - eps <= res[eps, pol].ci_high]
    p_beats = all(res[0.01, "policy_p"].mean > res[0.01, c].mean for c in ("block", "fec"))
    arq = res[0.01, "arq"]
    arq_ok = arq.ci_low <= 0.79 <= arq.ci_high
    ok = not far and p_beats and arq_ok
    near = ", ".join(f"{pol} {res[0.01, pol].mean:.4f}+-{res[0.01, pol].half_width:.4f}"
                     for pol in ("arq", "fec", "block", "policy_p"))
    assert verdict(8, ok, f"eps>=0.1 points off a_bar: {far or 'none'}; at eps=0.01 (a_bar=0.79): "
                          f"{near}; P > block and FEC: {p_beats}; ARQ = a_bar within CI: {arq_ok}")


# 9 -------------------------------------------------------------------------------


def test_criterion_09_capacity_loss_bound():
    rows = []
    for gamma in (5, 10, 20):
        m = run(SimConfig(p=0.2, a_bar=1.0, d=0, gamma=gamma, horizon=1_000_000))
        rows.append((gamma, m.s_hat, an.capacity_loss_bound(0.2, 0.0, gamma)))
    ok = all(s >= b for _, s, b in rows)
    assert verdict(9, ok, "; ".join(f"gamma={g}: {s:.4f} >= {b:.4f}" for g, s, b in rows))


# 10 ------------------------------------------------------------------------------


def test_criterion_10_prediction_band():
    tr = run(SimConfig(p=0.5, a_bar=1.0, d=0, gamma=3, horizon=1_000_000, keep_traces=True)).trace
    rep = an.check_lemma2(tr.q_hat, 0.5, 3, tol=0.1)
    assert verdict(10, rep.satisfied, f"mean q_hat {rep.observed:.4f} in [2.4, 3.6]")


# 11 ------------------------------------------------------------------------------


def test_criterion_11_multipath():
    base = dict(d=10, alpha=1.0, horizon=100_000, seed=11)
    s, _ = replicate_multipath(MultipathConfig(p_paths=(0.1,) * 3, a_flows=(1.0,) * 3, **base), 5)
    rates = [s[f"flow{f}_rate"].mean for f in range(3)]
    fair = (max(rates) - min(rates)) / max(rates) <= 0.05
    agg_ok = abs(s["aggregate_rate"].mean - 2.7) / 2.7 <= 0.05
    sweep = []
    for p1 in (0.0, 0.1, 0.2, 0.3, 0.4):
        paths = (p1, 0.1, 0.1)
        sp, _ = replicate_multipath(MultipathConfig(p_paths=paths, a_flows=(1.0,) * 3, **base), 5)
        cap = sum(1 - p for p in paths)
        sweep.append((p1, sp["aggregate_rate"].mean / cap))
    sweep_ok = all(abs(r - 1) <= 0.05 for _, r in sweep)
    gaps = []
    for d in (20, 40, 60, 80, 100):
        cfg = dict(p_paths=(0.2,) * 3, a_flows=(0.7,) * 3, d=d, alpha=1.0, horizon=100_000, seed=12)
        dual = replicate_multipath(MultipathConfig(scheduler="dual", **cfg), 5)[0]["mean_delay"].mean
        rr = replicate_multipath(MultipathConfig(scheduler="rr_arq", **cfg), 5)[0]["mean_delay"].mean
        gaps.append((d, dual, rr))
    lower = all(du < rr for _, du, rr in gaps)
    widening = all(b[2] - b[1] > a[2] - a[1] for a, b in zip(gaps, gaps[1:]))
    ok = fair and agg_ok and sweep_ok and lower and widening
    assert verdict(11, ok, f"flow rates {[round(r, 3) for r in rates]} fair: {fair}; aggregate "
                           f"{s['aggregate_rate'].mean:.3f} vs 2.7: {agg_ok}; sweep rate/capacity "
                           f"{[(p, round(r, 3)) for p, r in sweep]}; delay dual vs rr "
                           f"{[(d, round(a, 1), round(b, 1)) for d, a, b in gaps]} lower: {lower}, "
                           f"widening: {widening}")


# 12 ------------------------------------------------------------------------------


def test_criterion_12_rate_gap():
    rows = []
    for d, gamma in ((10, 50), (50, 200)):
        tr = run(SimConfig(p=0.2, a_bar=1.0, d=d, gamma=gamma, horizon=1_000_000,
                           keep_traces=True)).trace
        s = float(tr.S[an.burn_in(d):].mean())
        rows.append((d, gamma, s, an.convex_rate_gap(d, gamma)))
    ok = all(abs(s - 0.8) <= g for _, _, s, g in rows)
    assert verdict(12, ok, "; ".join(f"(d={d}, gamma={g}): |{s:.4f} - 0.8| <= {gap:.3f}"
                                      for d, g, s, gap in rows))


# 13 ------------------------------------------------------------------------------


def test_criterion_13_determinism(tmp_path):
    args = {
        "delay_vs_feedback": ["--d", "0,30"],
        "rate_vs_epsilon": ["--eps", "0.05,0.1"],
        "gamma_sweep": ["--a", "0.6", "--gamma", "1,5"],
        "delay_vs_load": ["--eps", "0.1"],
        "bounds": ["--d", "2,20"],
        "dummy_rate": ["--d", "5,15"],
        "queue_delay_scatter": [],
        "multipath_throughput": ["--p1", "0,0.3"],
        "multipath_delay": ["--d", "0,20"],
    }
    differing = []
    for cmd, extra in args.items():
        outs = []
        for i in range(2):
            dest = tmp_path / f"{cmd}{i}.csv"
            rc = expcli.main([cmd, "--slots", "3000", "--reps", "4", "--seed", "13", *extra,
                              "--out", str(dest)])
            assert rc == 0
            outs.append(dest.read_bytes())
        if outs[0] != outs[1]:
            differing.append(cmd)
    assert verdict(13, not differing, f"{len(args)} subcommands rerun with one seed; "
                                      f"byte-different outputs: {differing or 'none'}")
