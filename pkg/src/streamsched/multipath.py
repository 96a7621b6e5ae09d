"""Several flows sharing edge-disjoint lossy paths.

Each slot the scheduler gives every path to the flow with the largest
``Q_f * (1 - p_i)`` (per-flow virtual receiver queue, predicted over the
feedback delay); the flow then sends an information packet if its
prediction is below ``1/alpha`` and a coded packet otherwise.  Paths are
granted one after another and each grant moves the flow's prediction by the
packet's expected effect, so one flow does not take every path with coded
packets it mostly does not need.

The baseline hands paths out round-robin and every flow runs
selective-repeat ARQ.

Paths are visited most-reliable first, so a flow's information packets
land on its best paths and coded packets fill the rest.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from ._kernels import DUAL, RR_ARQ, simulate_multipath
from .policies import EPS, SlotAction
from .sim import estimate, rep_seeds, run_many

SCHEDULERS = {"dual": DUAL, "rr_arq": RR_ARQ}


@dataclass(frozen=True)
class MultipathConfig:
    p_paths: tuple = (0.2, 0.2, 0.2)
    a_flows: tuple = (0.7, 0.7, 0.7)
    d: int | None = 10
    alpha: float = 1.0
    horizon: int = 100_000
    seed: int = 0
    scheduler: str = "dual"
    keep_traces: bool = False

    def __post_init__(self):
        if not self.p_paths or not self.a_flows:
            raise ValueError("need at least one path and one flow")
        if any(not 0.0 <= p < 1.0 for p in self.p_paths):
            raise ValueError("path loss rates must be in [0, 1)")
        if any(not 0.0 <= a <= 1.0 for a in self.a_flows):
            raise ValueError("flow arrival rates must be in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.d is not None and self.d < 0:
            raise ValueError("d must be >= 0 (or None)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")

    @property
    def n_flows(self) -> int:
        return len(self.a_flows)

    @property
    def n_paths(self) -> int:
        return len(self.p_paths)


# -- building blocks --------------------------------------------------------------------


def path_order(p_paths) -> list[int]:
    """Path indices, most reliable first (stable on ties)."""
    return sorted(range(len(p_paths)), key=lambda i: p_paths[i])


def pick_flow(queues, p_i: float, i: int, slot: int, eligible=None) -> int:
    """Flow maximising ``queues[f] * (1 - p_i)`` on path ``i``, or -1.

    Ties go to the first flow in the rotation starting at ``(slot + i) mod F``.
    """
    n = len(queues)
    best, best_key = -1, 0.0
    for s in range(n):
        f = (slot + i + s) % n
        if eligible is not None and not eligible(f):
            continue
        key = queues[f] * (1.0 - p_i)
        if best < 0 or key > best_key + EPS:
            best, best_key = f, key
    return best


def allocate_paths(queues, p_paths, slot: int = 0, eligible=None) -> list[int]:
    """Owner flow per path for fixed queue values (``-1`` if none eligible)."""
    return [pick_flow(queues, p, i, slot, eligible) for i, p in enumerate(p_paths)]


def flow_decide(n_granted: int, q_hat: float, alpha: float, qt_eff: int,
                window_nonempty: bool = True) -> list[SlotAction]:
    """Actions for a flow's granted paths (most reliable first).

    Below the threshold ``1/alpha`` the paths carry information packets while
    the queue lasts and coded packets after that; at or above it they are all
    coded.  Coding needs a nonempty window (this slot's infos count).
    """
    if q_hat >= 1.0 / alpha - EPS and window_nonempty:
        return [SlotAction.CODED] * n_granted
    n_info = min(n_granted, qt_eff)
    can_code = window_nonempty or n_info > 0
    rest = SlotAction.CODED if can_code else SlotAction.IDLE
    return [SlotAction.INFO] * n_info + [rest] * (n_granted - n_info)


def multipath_predict(lagged_qr: float, history, p_paths) -> float:
    """Lagged queue plus expected change from in-flight transmissions.

    ``history`` holds ``(path, action)`` pairs for the flow's last d slots.
    """
    q = float(lagged_qr)
    for i, a in history:
        if a == SlotAction.INFO:
            q += p_paths[i]
        elif a == SlotAction.CODED:
            q -= 1.0 - p_paths[i]
    return q


# -- reference engine ---------------------------------------------------------------------


@dataclass
class _Flow:
    qt: int = 0
    qr: int = 0
    n_sent: int = 0
    delivered: int = 0
    history: deque = None        # per slot: list of (path, action)
    reports: deque = None        # (qr, delivered) per slot
    missing: set = None
    pending: set = None
    arrivals: list = None
    tx: list = None
    dlv: list = None


def simulate_multipath_reference(cfg: MultipathConfig, u_arr, u_era):
    """Slot-by-slot Python version of the compiled multipath loop."""
    F, P, h, d = cfg.n_flows, cfg.n_paths, cfg.horizon, cfg.d
    flows = [_Flow(history=deque(), reports=deque(), missing=set(), pending=set(),
                   arrivals=[], tx=[], dlv=[]) for _ in range(F)]
    owner = np.full((h, P), -1, np.int64)
    act = np.zeros((h, P), np.int8)
    X = np.zeros((h, P), np.int8)
    seqs = np.zeros((h, P), np.int64)
    qr_tr = np.zeros((h + 1, F), np.int64)
    qhat = np.zeros((h, F))
    order = path_order(cfg.p_paths)
    for k in range(h):
        coding, infos_left, qt_eff, windows = [], [], [], []
        for f, fl in enumerate(flows):
            fl.reports.append((fl.qr, fl.delivered))
            if d is not None and len(fl.reports) > d + 1:
                fl.reports.popleft()
            lag_qr, lag_dt = fl.reports[0] if d is not None and len(fl.reports) == d + 1 else (0, 0)
            hist = [x for slot in fl.history for x in slot]
            q = multipath_predict(lag_qr, hist, cfg.p_paths)
            qhat[k, f] = q
            a = int(u_arr[k, f] < cfg.a_flows[f])
            if a:
                fl.arrivals.append(k)
                fl.tx.append(-1)
                fl.dlv.append(-1)
            qt_eff.append(fl.qt + a)
            windows.append(fl.n_sent > lag_dt)
            coding.append(q >= 1.0 / cfg.alpha - EPS and windows[-1])
            infos_left.append(qt_eff[-1])
            if cfg.scheduler == "rr_arq" and d is not None and k - d - 1 >= 0:
                j = k - d - 1
                for i in range(P):
                    if owner[j, i] == f and X[j, i] and act[j, i] != SlotAction.IDLE:
                        fl.pending.add(int(seqs[j, i]))
        if cfg.scheduler == "dual":
            # paths are granted one at a time; each grant moves the flow's
            # prediction by its expected effect, like an in-flight packet
            q_cur = list(qhat[k])
            for i in order:
                f = pick_flow(q_cur, cfg.p_paths[i], i, k,
                              lambda g: coding[g] or infos_left[g] > 0)
                if f < 0:
                    continue
                (a,) = flow_decide(1, q_cur[f], cfg.alpha, infos_left[f], windows[f])
                owner[k, i], act[k, i] = f, a
                if a == SlotAction.INFO:
                    infos_left[f] -= 1
                    q_cur[f] += cfg.p_paths[i]
                    windows[f] = True
                else:
                    q_cur[f] -= 1.0 - cfg.p_paths[i]
                coding[f] = q_cur[f] >= 1.0 / cfg.alpha - EPS and windows[f]
        else:
            sent = [0] * F
            for i in order:
                f = (k + i) % F
                fl = flows[f]
                if fl.pending:
                    t = min(fl.pending)
                    fl.pending.discard(t)
                    owner[k, i], act[k, i], seqs[k, i] = f, SlotAction.CODED, t
                elif qt_eff[f] - sent[f] > 0:
                    owner[k, i], act[k, i] = f, SlotAction.INFO
                    sent[f] += 1
        for i in order:
            f = owner[k, i]
            if f >= 0 and act[k, i] == SlotAction.INFO:
                fl = flows[f]
                fl.n_sent += 1
                fl.tx[fl.n_sent - 1] = k
                seqs[k, i] = fl.n_sent
        for i in range(P):
            X[k, i] = int(owner[k, i] >= 0 and u_era[k, i] < cfg.p_paths[i])
        for f, fl in enumerate(flows):
            mine = [(i, SlotAction(act[k, i])) for i in range(P) if owner[k, i] == f]
            fl.history.append(mine)
            if d is not None and len(fl.history) > d:
                fl.history.popleft()
            q = fl.qr
            for i, a in mine:
                x = int(X[k, i])
                q += x if a == SlotAction.INFO else x - 1
            fl.qr = max(q, 0)
            fl.qt = qt_eff[f] - sum(1 for _, a in mine if a == SlotAction.INFO)
            if cfg.scheduler == "dual":
                if fl.qr == 0:
                    for j in range(fl.delivered, fl.n_sent):
                        fl.dlv[j] = k
                    fl.delivered = fl.n_sent
            else:
                for i, a in mine:
                    if a == SlotAction.INFO and X[k, i]:
                        fl.missing.add(int(seqs[k, i]))
                    elif a == SlotAction.CODED and not X[k, i]:
                        fl.missing.discard(int(seqs[k, i]))
                while fl.delivered < fl.n_sent and fl.delivered + 1 not in fl.missing:
                    fl.dlv[fl.delivered] = k
                    fl.delivered += 1
            qr_tr[k + 1, f] = fl.qr
    return {"act": act, "owner": owner, "X": X, "qr": qr_tr, "q_hat": qhat,
            "arrival_slot": [np.array(fl.arrivals) for fl in flows],
            "tx_slot": [np.array(fl.tx) for fl in flows],
            "delivery_slot": [np.array(fl.dlv) for fl in flows]}


# -- runs and metrics -----------------------------------------------------------------------


@dataclass
class MultipathMetrics:
    horizon: int
    flow_rates: list        # information packets sent per slot, per flow
    flow_goodput: list      # in-order deliveries per slot, per flow
    aggregate_rate: float
    aggregate_goodput: float
    mean_delay: float       # over all delivered packets of all flows
    flow_delay: list
    path_busy: list         # fraction of slots each path carried a packet
    coded_fraction: float
    trace: dict | None = None

    SCALARS = ("aggregate_rate", "aggregate_goodput", "mean_delay", "coded_fraction")


def _streams(seed, F, P, h):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key)
    ga, ge = (np.random.default_rng(s) for s in ss.spawn(2))
    return ga.random((h, F)), ge.random((h, P))


def run_multipath(cfg: MultipathConfig, seed=None, engine: str = "fast") -> MultipathMetrics:
    F, P, h = cfg.n_flows, cfg.n_paths, cfg.horizon
    u_arr, u_era = _streams(cfg.seed if seed is None else seed, F, P, h)
    if engine == "reference":
        tr = simulate_multipath_reference(cfg, u_arr, u_era)
        act, owner = tr["act"], tr["owner"]
        arr, tx, dlv = tr["arrival_slot"], tr["tx_slot"], tr["delivery_slot"]
    elif engine == "fast":
        d = -1 if cfg.d is None else cfg.d
        out = simulate_multipath(u_arr, u_era, np.asarray(cfg.p_paths, float),
                                 np.asarray(cfg.a_flows, float), d, float(cfg.alpha),
                                 SCHEDULERS[cfg.scheduler])
        act, owner, X, A, qt, qr, dt, qhat, arr_m, tx_m, dlv_m, n_arr = out
        arr = [arr_m[f, : n_arr[f]] for f in range(F)]
        tx = [tx_m[f, : n_arr[f]] for f in range(F)]
        dlv = [dlv_m[f, : n_arr[f]] for f in range(F)]
        tr = {"act": act, "owner": owner, "X": X, "A": A, "qt": qt, "qr": qr,
              "delivered": dt, "q_hat": qhat, "arrival_slot": arr, "tx_slot": tx,
              "delivery_slot": dlv}
    else:
        raise ValueError(f"unknown engine {engine!r}")
    info = act == SlotAction.INFO
    rates, good, delays, all_d = [], [], [], []
    for f in range(F):
        rates.append(float(np.sum(info & (owner == f))) / h)
        ok = np.asarray(dlv[f]) >= 0
        good.append(float(ok.sum()) / h)
        dd = np.asarray(dlv[f])[ok] - np.asarray(arr[f])[ok]
        delays.append(float(dd.mean()) if dd.size else float("nan"))
        all_d.append(dd)
    all_d = np.concatenate(all_d) if all_d else np.array([])
    busy = (owner >= 0).mean(axis=0).tolist()
    sent = int((owner >= 0).sum())
    return MultipathMetrics(
        horizon=h, flow_rates=rates, flow_goodput=good, aggregate_rate=sum(rates),
        aggregate_goodput=sum(good),
        mean_delay=float(all_d.mean()) if all_d.size else float("nan"),
        flow_delay=delays, path_busy=busy,
        coded_fraction=float(np.sum(act == SlotAction.CODED)) / sent if sent else 0.0,
        trace=tr if cfg.keep_traces else None)


def run_multipath_rr_arq(cfg: MultipathConfig, seed=None, engine: str = "fast") -> MultipathMetrics:
    return run_multipath(replace(cfg, scheduler="rr_arq"), seed, engine)


def _run_one(args):
    cfg, ss = args
    return run_multipath(cfg, ss)


def replicate_multipath(cfg: MultipathConfig, n_reps: int, workers: int = 1):
    if n_reps < 2:
        raise ValueError("replicate needs n_reps >= 2")
    cfg = replace(cfg, keep_traces=False)
    runs = run_many(_run_one, [(cfg, ss) for ss in rep_seeds(cfg.seed, n_reps)], workers)
    summary = {name: estimate([getattr(r, name) for r in runs]) for name in MultipathMetrics.SCALARS}
    for f in range(cfg.n_flows):
        summary[f"flow{f}_rate"] = estimate([r.flow_rates[f] for r in runs])
    return summary, runs
