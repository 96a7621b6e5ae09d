"""Transmitter decision rules.

Every policy sees only what the sender knows at slot k: its own queue
``Qt_k + A_k``, the receiver report from slot ``k - d`` and its own last d
decisions.  That is packaged as a :class:`SenderView`.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .codec import block_redundancy


class SlotAction(enum.IntEnum):
    IDLE = 0
    INFO = 1
    CODED = 2


EPS = 1e-9  # threshold tolerance; the prediction lives on a grid so ties happen

# integer codes shared with the compiled engine
POLICY_CODES = {"arq": 0, "fec": 1, "block": 2, "policy_p": 3, "weighted": 4}


@dataclass
class PredictorState:
    """Lagged receiver queue plus the sender's decisions still in flight.

    ``d=None`` means feedback never arrives, so the history is never trimmed.
    Running sums keep :func:`predict` O(1) per slot.
    """

    lagged_qr: int = 0
    history: deque = field(default_factory=deque)  # (S_j, C_j), oldest first
    p: float = 0.0
    d: int | None = 0
    n_info: int = 0
    n_coded: int = 0

    def push(self, s: int, c: int) -> None:
        self.history.append((s, c))
        self.n_info += s
        self.n_coded += c
        if self.d is not None and len(self.history) > self.d:
            s0, c0 = self.history.popleft()
            self.n_info -= s0
            self.n_coded -= c0


def predict_counts(lagged_qr: float, n_info: int, n_coded: int, p: float) -> float:
    """Same prediction from in-flight counts; exact given the counts."""
    return lagged_qr + n_info * p - n_coded * (1.0 - p)


def predict(ps: PredictorState) -> float:
    """d-step-ahead estimate of the receiver's virtual queue.

    Adds the expected queue increment of every in-flight decision to the
    last reported queue: +p for an information packet (erased with
    probability p), -(1-p) for a coded packet (arrives with probability 1-p).
    The result may be negative or fractional.
    """
    return predict_counts(ps.lagged_qr, ps.n_info, ps.n_coded, ps.p)


@dataclass
class SenderView:
    slot: int
    qt: int                 # Qt_k before this slot's arrival
    qt_eff: int             # Qt_k + A_k
    lagged_qr: int          # Qr_{k-d}
    lagged_delivered: int   # receiver's delivered_through as of slot k-d
    n_info_inflight: int
    n_coded_inflight: int
    q_hat: float
    window_nonempty: bool
    lagged_missing: frozenset = frozenset()  # seqs the receiver lacked at k-d


def policy_p_decide(q_hat: float, qt_eff: int, gamma: float, window_nonempty: bool = True) -> SlotAction:
    """Threshold rule: code when the predicted queue reaches gamma.

    The cost ``(gamma - q_hat) * C`` is minimised.  A tie codes when some
    backlog is predicted (``q_hat == gamma > 0``) and sends otherwise, so
    gamma = 1 with exact feedback is ARQ and gamma = 0 never codes for an
    empty prediction.  A coded packet needs something in the coding window.
    """
    if q_hat >= gamma - EPS and q_hat > EPS and window_nonempty:
        return SlotAction.CODED
    return SlotAction.INFO if qt_eff >= 1 else SlotAction.IDLE


def arq_decide(lagged_qr: int, n_coded_inflight: int, qt_eff: int) -> SlotAction:
    """Repair while reported erasures exceed the repairs already in flight."""
    if lagged_qr - n_coded_inflight > 0:
        return SlotAction.CODED
    return SlotAction.INFO if qt_eff >= 1 else SlotAction.IDLE


def weighted_decide(q_hat: float, qt: int, rho: float, qt_eff: int, window_nonempty: bool = True) -> SlotAction:
    """Minimise ``(rho * Qt - q_hat) * C``; ties break as in policy P."""
    if rho * qt - q_hat <= EPS and q_hat > EPS and window_nonempty:
        return SlotAction.CODED
    return SlotAction.INFO if qt_eff >= 1 else SlotAction.IDLE


class Policy:
    name = "base"
    uses_feedback = True

    def decide(self, view: SenderView) -> SlotAction:
        raise NotImplementedError

    def record(self, action: SlotAction) -> None:
        """Hook for policies with internal schedule state."""


class ArqPolicy(Policy):
    """Selective-repeat ARQ.

    The repair slot carries the oldest packet that was missing at the last
    report and is not already being resent.
    """

    name = "arq"

    def __init__(self, d: int | None = 0):
        self.d = d
        self.inflight: deque = deque()  # target seq per recent slot, 0 = none
        self.target = 0

    def decide(self, view):
        act = arq_decide(view.lagged_qr, view.n_coded_inflight, view.qt_eff)
        self.target = 0
        if act == SlotAction.CODED:
            busy = set(self.inflight)
            self.target = min(j for j in view.lagged_missing if j not in busy)
        return act

    def record(self, action):
        self.inflight.append(self.target if action == SlotAction.CODED else 0)
        if self.d is not None and len(self.inflight) > self.d:
            self.inflight.popleft()


class ThresholdPolicy(Policy):
    name = "policy_p"

    def __init__(self, gamma: float = 1.0):
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        self.gamma = gamma

    def decide(self, view):
        return policy_p_decide(view.q_hat, view.qt_eff, self.gamma, view.window_nonempty)


class WeightedPolicy(Policy):
    name = "weighted"

    def __init__(self, rho: float = 0.0):
        if rho < 0:
            raise ValueError("rho must be >= 0")
        self.rho = rho

    def decide(self, view):
        return weighted_decide(view.q_hat, view.qt, self.rho, view.qt_eff, view.window_nonempty)


class FecPolicy(Policy):
    """Open-loop FEC: one coded packet per (1-p)/p information packets.

    Each information transmission earns ``ratio`` credit (p/(1-p) unless
    given); a full unit of credit is spent on a coded packet.
    """

    name = "fec"
    uses_feedback = False

    def __init__(self, p: float, ratio: float | None = None):
        if ratio is None:
            if not 0.0 < p < 1.0:
                raise ValueError("open-loop FEC needs 0 < p < 1")
            ratio = p / (1.0 - p)
        if ratio < 0:
            raise ValueError("FEC ratio must be >= 0")
        self.ratio = ratio
        self.credit = 0.0

    def decide(self, view):
        if self.credit >= 1.0 - 1e-9 and view.window_nonempty:
            return SlotAction.CODED
        return SlotAction.INFO if view.qt_eff >= 1 else SlotAction.IDLE

    def record(self, action):
        if action == SlotAction.INFO:
            self.credit += self.ratio
        elif action == SlotAction.CODED:
            self.credit -= 1.0


class BlockPolicy(Policy):
    """k information packets, then n-k coded packets over that block."""

    name = "block"
    uses_feedback = False

    def __init__(self, k: int, n: int):
        if k < 1 or n <= k:
            raise ValueError(f"invalid block parameters k={k}, n={n}")
        self.k, self.n = k, n
        self.infos = 0
        self.coded_left = 0

    def decide(self, view):
        if self.coded_left:
            return SlotAction.CODED
        return SlotAction.INFO if view.qt_eff >= 1 else SlotAction.IDLE

    def record(self, action):
        if action == SlotAction.CODED:
            self.coded_left -= 1
        elif action == SlotAction.INFO:
            self.infos += 1
            if self.infos == self.k:
                self.infos = 0
                self.coded_left = self.n - self.k


def fec_ratio_for(p: float) -> float:
    return p / (1.0 - p) if 0.0 < p < 1.0 else 0.0


def make_policy(name: str, *, p: float, d: int | None = 0, gamma: float = 1.0, rho: float = 0.0,
                fec_ratio: float | None = None, block_k: int = 50,
                block_n: int | None = None) -> Policy:
    if name == "arq":
        return ArqPolicy(d)
    if name == "policy_p":
        return ThresholdPolicy(gamma)
    if name == "weighted":
        return WeightedPolicy(rho)
    if name == "fec":
        return FecPolicy(p, fec_ratio)
    if name == "block":
        if block_n is None:
            block_n = block_k + block_redundancy(block_k, p)
        return BlockPolicy(block_k, block_n)
    raise ValueError(f"unknown policy {name!r}; expected one of {sorted(POLICY_CODES)}")
