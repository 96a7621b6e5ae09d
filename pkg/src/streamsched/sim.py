"""Slotted single-path system: arrivals, sender queue, erasure channel,
delayed feedback and the virtual receiver queue.

Within a slot the order is fixed: arrival, sender decision, transmission and
erasure, receiver update, then the receiver's report goes into the feedback
pipe.  The sender reads the report from ``d`` slots ago.

Two engines produce the same slot trace from the same random streams:
:func:`step` (readable, drives the real codec objects) and the compiled loop
in :mod:`streamsched._kernels` (ideal codec only, used for long runs).
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import codec
from ._kernels import simulate_single
from .policies import (POLICY_CODES, ArqPolicy, BlockPolicy, PredictorState, SenderView,
                       SlotAction, fec_ratio_for, make_policy, predict)

Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    p: float = 0.2
    a_bar: float = 0.7
    d: int | None = 0           # None: feedback never arrives
    horizon: int = 10_000
    seed: int = 0
    policy: str = "policy_p"
    gamma: float = 1.0
    rho: float = 0.0
    fec_ratio: float | None = None   # coded credit per info; default p/(1-p)
    block_k: int = 50
    block_n: int | None = None       # default k + ceil(k p / (1-p))
    codec_mode: str = "ideal"
    p_pred: float | None = None      # loss rate assumed by the predictor
    symbols: int = codec.DEFAULT_SYMBOLS
    keep_traces: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"p must be in [0, 1), got {self.p}")
        if not 0.0 <= self.a_bar <= 1.0:
            raise ValueError(f"a_bar must be in [0, 1], got {self.a_bar}")
        if self.d is not None and self.d < 0:
            raise ValueError("d must be >= 0 (or None for no feedback)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.policy not in POLICY_CODES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.gamma < 0 or self.rho < 0:
            raise ValueError("gamma and rho must be >= 0")
        if self.codec_mode not in ("ideal", "real"):
            raise ValueError(f"codec_mode must be ideal or real, got {self.codec_mode!r}")
        if self.block_k < 1 or self.block_n is not None and self.block_n <= self.block_k:
            raise ValueError("need 1 <= block_k < block_n")

    @property
    def effective_block_n(self) -> int:
        if self.block_n is not None:
            return self.block_n
        return self.block_k + codec.block_redundancy(self.block_k, self.p)

    @property
    def effective_fec_ratio(self) -> float:
        return fec_ratio_for(self.p) if self.fec_ratio is None else self.fec_ratio

    @property
    def predictor_p(self) -> float:
        return self.p if self.p_pred is None else self.p_pred


# -- randomness -------------------------------------------------------------------


@dataclass
class Streams:
    """Independent generators so policies can share channel randomness."""

    arrivals: np.random.Generator
    erasures: np.random.Generator
    coeffs: np.random.Generator


def make_streams(seed) -> Streams:
    if isinstance(seed, np.random.SeedSequence):
        # copy, so spawning is repeatable for the same SeedSequence object
        ss = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        ss = np.random.SeedSequence(seed)
    a, e, c = (np.random.default_rng(s) for s in ss.spawn(3))
    return Streams(a, e, c)


def draw_uniforms(streams: Streams, horizon: int) -> np.ndarray:
    """``u[k] = (arrival uniform, erasure uniform)``, as :func:`step` draws them."""
    return np.column_stack([streams.arrivals.random(horizon), streams.erasures.random(horizon)])


# -- reference engine ------------------------------------------------------------------


@dataclass(frozen=True)
class Report:
    qr: int = 0
    delivered_through: int = 0
    missing: frozenset = frozenset()


@dataclass
class SlotEvents:
    slot: int
    arrival: int
    action: SlotAction
    erased: int
    redundant: int
    q_hat: float
    delivered: list


@dataclass
class SystemState:
    config: SimConfig
    k: int = 0
    qt: int = 0
    qr: int = 0
    n_sent: int = 0
    pipe: deque = field(default_factory=deque)
    predictor: PredictorState = None
    encoder: object = None
    decoder: object = None
    waiting: deque = field(default_factory=deque)   # seqs of queued packets
    arrival_slot: list = field(default_factory=list)
    tx_slot: list = field(default_factory=list)
    delivery_slot: list = field(default_factory=list)

    @classmethod
    def initial(cls, config: SimConfig) -> "SystemState":
        st = cls(config)
        st.predictor = PredictorState(p=config.predictor_p, d=config.d)
        if config.policy == "block":
            st.encoder = codec.BlockEncoder(config.block_k, config.effective_block_n)
            st.decoder = codec.BlockDecoder(config.block_k, config.effective_block_n, config.codec_mode)
        else:
            st.encoder = codec.Encoder()
            st.decoder = codec.Decoder(config.codec_mode)
        return st

    def report(self) -> Report:
        missing = frozenset()
        if self.config.policy == "arq":
            dec = self.decoder
            missing = frozenset(j for j in range(dec.delivered_through + 1, self.n_sent + 1)
                                if j not in dec.known)
        return Report(self.qr, self.decoder.delivered_through, missing)


def step(state: SystemState, policy, rng: Streams) -> tuple[SystemState, SlotEvents]:
    """Advance one slot in place; returns the state and what happened."""
    cfg = state.config
    k = state.k
    state.pipe.append(state.report())
    if cfg.d is not None and len(state.pipe) > cfg.d + 1:
        state.pipe.popleft()
    lag = state.pipe[0] if cfg.d is not None and len(state.pipe) == cfg.d + 1 else Report()

    ps = state.predictor
    ps.lagged_qr = lag.qr
    q_hat = predict(ps)

    a = int(rng.arrivals.random() < cfg.a_bar)
    if a:
        state.arrival_slot.append(k)
        state.tx_slot.append(-1)
        state.delivery_slot.append(-1)
        state.waiting.append(len(state.arrival_slot))
    qt_eff = state.qt + a

    enc = state.encoder
    if policy.uses_feedback:
        enc.advance_window(lag.delivered_through)
        window = enc.next_seq - 1 >= enc.L
    else:
        window = state.n_sent > 0
    view = SenderView(k, state.qt, qt_eff, lag.qr, lag.delivered_through, ps.n_info, ps.n_coded,
                      q_hat, window, lag.missing)
    action = policy.decide(view)
    if action == SlotAction.INFO and qt_eff < 1:
        raise RuntimeError("policy sent an information packet from an empty queue")
    policy.record(action)
    s = int(action == SlotAction.INFO)
    c = int(action == SlotAction.CODED)
    ps.push(s, c)

    pkt = None
    closing = None
    if s:
        seq = state.waiting.popleft()
        state.n_sent += 1
        state.tx_slot[seq - 1] = k
        payload = None
        if cfg.codec_mode == "real":
            payload = rng.coeffs.integers(0, 256, cfg.symbols, dtype=np.uint8)
        pkt = enc.encode_info(payload)
    elif c:
        if isinstance(policy, ArqPolicy):
            pkt = enc.retransmit(policy.target)
        else:
            if isinstance(policy, BlockPolicy):
                start = enc.block_start
            pkt = enc.encode_coded(rng.coeffs)
            if isinstance(policy, BlockPolicy) and not enc.wants_coded:
                closing = start

    # one erasure draw per slot, used or not, keeps streams aligned across policies
    x = int(rng.erasures.random() < cfg.p and pkt is not None)
    redundant = int(c and state.qr == 0)
    state.qr = max(0, state.qr + s * x - c * (1 - x))
    state.qt = state.qt + a - s

    delivered = []
    if pkt is not None and not x:
        delivered, _ = state.decoder.receive(pkt)
    if closing is not None:
        delivered = delivered + state.decoder.close_block(closing)
    for p in delivered:
        state.delivery_slot[p.seq - 1] = k
    state.k += 1
    return state, SlotEvents(k, a, action, x, redundant, q_hat, delivered)


# -- metrics --------------------------------------------------------------------------


@dataclass
class Trace:
    A: np.ndarray
    S: np.ndarray
    C: np.ndarray
    X: np.ndarray
    R: np.ndarray
    qt: np.ndarray      # length horizon + 1
    qr: np.ndarray      # length horizon + 1
    delivered: np.ndarray  # delivered-through, length horizon + 1
    q_hat: np.ndarray
    arrival_slot: np.ndarray
    tx_slot: np.ndarray
    delivery_slot: np.ndarray


@dataclass
class RunMetrics:
    horizon: int
    arrivals: int
    info_sent: int
    coded_sent: int
    delivered: int
    stranded: int       # arrived but not delivered by the horizon (and not lost)
    lost: int           # skipped by a failed block
    s_bar: float        # information transmissions per slot
    s_hat: float        # slots not spent on coded packets
    goodput: float      # in-order deliveries per slot
    r_bar: float        # coded packets sent while the true receiver queue was empty
    mean_delay: float
    mean_dqt: float
    mean_dqr: float
    max_qr: int
    mean_qr: float
    mean_qt: float
    mean_q_hat: float
    block_failures: int = 0
    dof_failures: int = 0
    trace: Trace | None = None

    SCALARS = ("s_bar", "s_hat", "goodput", "r_bar", "mean_delay", "mean_dqt", "mean_dqr",
               "mean_qr", "mean_qt", "mean_q_hat", "max_qr", "stranded", "lost", "block_failures",
               "dof_failures")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "trace"}


def _mean(x) -> float:
    return float(np.mean(x)) if len(x) else math.nan


def _metrics(cfg, A, S, C, X, R, qt, qr, dt, q_hat, arr, tx, dlv, lost, block_failures,
             dof_failures=0) -> RunMetrics:
    arr, tx, dlv = np.asarray(arr), np.asarray(tx), np.asarray(dlv)
    lost = np.asarray(lost, dtype=bool)
    ok = dlv >= 0
    h = cfg.horizon
    m = RunMetrics(
        horizon=h,
        arrivals=int(A.sum()),
        info_sent=int(S.sum()),
        coded_sent=int(C.sum()),
        delivered=int(ok.sum()),
        stranded=int((~ok & ~lost).sum()),
        lost=int(lost.sum()),
        s_bar=float(S.sum()) / h,
        s_hat=1.0 - float(C.sum()) / h,
        goodput=float(ok.sum()) / h,
        r_bar=float(R.sum()) / h,
        mean_delay=_mean(dlv[ok] - arr[ok]),
        mean_dqt=_mean(tx[ok] - arr[ok]),
        mean_dqr=_mean(dlv[ok] - tx[ok]),
        max_qr=int(qr.max()),
        mean_qr=float(qr[:h].mean()),
        mean_qt=float(qt[:h].mean()),
        mean_q_hat=float(q_hat.mean()),
        block_failures=int(block_failures),
        dof_failures=int(dof_failures),
    )
    if cfg.keep_traces:
        m.trace = Trace(A, S, C, X, R, qt, qr, dt, q_hat, arr, tx, dlv)
    return m


def _run_reference(cfg: SimConfig, streams: Streams) -> RunMetrics:
    h = cfg.horizon
    pol = make_policy(cfg.policy, p=cfg.p, d=cfg.d, gamma=cfg.gamma, rho=cfg.rho,
                      fec_ratio=cfg.fec_ratio, block_k=cfg.block_k, block_n=cfg.effective_block_n)
    st = SystemState.initial(cfg)
    A, S, C, X, R = (np.zeros(h, np.int8) for _ in range(5))
    qt, qr, dt = (np.zeros(h + 1, np.int64) for _ in range(3))
    q_hat = np.zeros(h)
    for k in range(h):
        _, ev = step(st, pol, streams)
        A[k], X[k], R[k], q_hat[k] = ev.arrival, ev.erased, ev.redundant, ev.q_hat
        S[k] = ev.action == SlotAction.INFO
        C[k] = ev.action == SlotAction.CODED
        qt[k + 1], qr[k + 1], dt[k + 1] = st.qt, st.qr, st.decoder.delivered_through
    lost = np.zeros(len(st.arrival_slot), np.int8)
    dof = 0
    if isinstance(st.decoder, codec.BlockDecoder):
        lost[[j - 1 for j in st.decoder.lost]] = 1
        dof = st.decoder.rank_failures
    else:
        dof = st.decoder.dof_failures
    failures = getattr(st.decoder, "failures", 0)
    return _metrics(cfg, A, S, C, X, R, qt, qr, dt, q_hat, st.arrival_slot, st.tx_slot,
                    st.delivery_slot, lost, failures, dof)


def _run_fast(cfg: SimConfig, streams: Streams) -> RunMetrics:
    u = draw_uniforms(streams, cfg.horizon)
    d = -1 if cfg.d is None else cfg.d
    out = simulate_single(u, cfg.p, cfg.predictor_p, cfg.a_bar, d, POLICY_CODES[cfg.policy],
                          float(cfg.gamma), float(cfg.rho), cfg.block_k, cfg.effective_block_n,
                          cfg.effective_fec_ratio)
    return _metrics(cfg, *out)


def run(config: SimConfig, engine: str = "auto", seed=None) -> RunMetrics:
    """Simulate ``config.horizon`` slots.

    ``engine='auto'`` uses the compiled loop for the ideal codec and the
    reference engine for the real one.  ``seed`` overrides ``config.seed``
    (an int or a ``SeedSequence``).
    """
    streams = make_streams(config.seed if seed is None else seed)
    if engine == "auto":
        engine = "fast" if config.codec_mode == "ideal" else "reference"
    if engine == "fast":
        if config.codec_mode != "ideal":
            raise ValueError("the compiled engine models the ideal codec only")
        return _run_fast(config, streams)
    if engine == "reference":
        return _run_reference(config, streams)
    raise ValueError(f"unknown engine {engine!r}")


# -- replication ------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


def estimate(values) -> Estimate:
    """Mean with a normal-approximation 95% interval; NaNs are dropped."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return Estimate(math.nan, math.nan, math.nan, 0)
    m = float(v.mean())
    if v.size < 2:
        return Estimate(m, m, m, 1)
    hw = Z95 * float(v.std(ddof=1)) / math.sqrt(v.size)
    return Estimate(m, m - hw, m + hw, int(v.size))


def rep_seeds(seed: int, n_reps: int) -> list:
    return np.random.SeedSequence(seed).spawn(n_reps)


def _run_one(args):
    cfg, ss, engine = args
    return run(cfg, engine, seed=ss)


def run_many(runner, configs_and_seeds, workers: int = 1) -> list:
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(runner, configs_and_seeds))
    return [runner(x) for x in configs_and_seeds]


def replicate(config: SimConfig, n_reps: int, engine: str = "auto", workers: int = 1):
    """Run ``n_reps`` independent replications; returns ``(summary, runs)``.

    ``summary`` maps each scalar metric to an :class:`Estimate`.
    """
    if n_reps < 2:
        raise ValueError("replicate needs n_reps >= 2")
    cfg = replace(config, keep_traces=False)
    jobs = [(cfg, ss, engine) for ss in rep_seeds(config.seed, n_reps)]
    runs = run_many(_run_one, jobs, workers)
    return summarize(runs), runs


def summarize(runs) -> dict:
    return {name: estimate([getattr(r, name) for r in runs]) for name in RunMetrics.SCALARS}
