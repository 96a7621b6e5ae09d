"""Analytic bounds and estimators, and checkers that hold traces against them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BoundReport:
    name: str
    params: dict
    bound: float
    observed: float
    satisfied: bool
    violation_slots: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


# -- estimator accuracy -------------------------------------------------------------


def worst_case_delta(p: float, d: int) -> float:
    """Sample-path bound on |Qr - Q_hat|: every in-flight slot moves it by
    at most max(p, 1-p), counted twice."""
    if not 0.0 <= p <= 1.0 or d < 0:
        raise ValueError("need p in [0, 1] and d >= 0")
    return 2.0 * d * max(p, 1.0 - p)


def hoeffding_delta(p: float, d: int, q: float) -> float:
    """Error bound that holds with probability at least ``q``."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"confidence q must be in (0, 1), got {q}")
    if d < 1:
        raise ValueError("d must be >= 1")
    return 2.0 * p * math.sqrt(d / 2.0 * math.log(2.0 / (1.0 - q)))


def check_estimator_error(qr, q_hat, p: float, d: int, q: float | None = None) -> BoundReport:
    """Compare per-slot |Qr_k - Q_hat_k| against both error bounds.

    ``qr`` may carry one extra trailing entry (the post-horizon state).
    """
    q_hat = np.asarray(q_hat, dtype=float)
    err = np.abs(np.asarray(qr[: len(q_hat)], dtype=float) - q_hat)
    wc = worst_case_delta(p, d)
    tol = 1e-9 * max(1.0, wc)
    viol = np.flatnonzero(err > wc + tol)
    rep = BoundReport("worst_case", {"p": p, "d": d}, wc, float(err.max(initial=0.0)),
                      viol.size == 0, viol.tolist())
    if q is not None and d >= 1:
        hd = hoeffding_delta(p, d, q)
        within = float(np.mean(err <= hd + 1e-12)) if err.size else 1.0
        n = max(err.size, 1)
        allowance = 3.0 * math.sqrt(q * (1 - q) / n)
        rep.extra = {"hoeffding_delta": hd, "within_fraction": within, "q": q,
                     "hoeffding_ok": within >= q - allowance}
    return rep


# -- queue bound under the threshold policy ---------------------------------------------


def theorem1_bound(gamma: float, delta: float) -> float:
    return gamma + delta + 1.0


def burn_in(d: int | None) -> int:
    return max(10 * (d or 0), 100)


def check_theorem1(qr, q_hat, gamma: float, delta: float, d: int | None) -> BoundReport:
    """After burn-in, Qr must stay within gamma + delta + 1.

    Only slots where the estimator error is itself within ``delta`` count;
    with the worst-case delta that is every slot.
    """
    q_hat = np.asarray(q_hat, dtype=float)
    qr = np.asarray(qr[: len(q_hat)], dtype=float)
    b = burn_in(d)
    bound = theorem1_bound(gamma, delta)
    qr_tail, err = qr[b:], np.abs(qr[b:] - q_hat[b:])
    eligible = err <= delta + 1e-9
    viol = np.flatnonzero(eligible & (qr_tail > bound + 1e-9)) + b
    return BoundReport("theorem1", {"gamma": gamma, "delta": delta, "d": d, "burn_in": b}, bound,
                       float(qr_tail.max(initial=0.0)), viol.size == 0, viol.tolist(),
                       {"eligible_slots": int(eligible.sum())})


# -- rate ------------------------------------------------------------------------------------


def capacity_loss_bound(p: float, delta: float, gamma: float) -> float:
    """Lower bound on the long-run fraction of slots not spent on coding."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    return (1.0 - p) - (0.5 + delta + (1.0 + delta) * (1.0 - p)) / gamma


def lemma2_band(p: float, gamma: float) -> tuple[float, float]:
    return gamma - (1.0 - p), gamma + p


def check_lemma2(q_hat, p: float, gamma: float, tol: float = 0.1) -> BoundReport:
    lo, hi = lemma2_band(p, gamma)
    m = float(np.mean(q_hat))
    return BoundReport("lemma2", {"p": p, "gamma": gamma, "tol": tol}, hi, m,
                       lo - tol <= m <= hi + tol, extra={"band": (lo, hi)})


def convex_rate_gap(d: int, gamma: float) -> float:
    """Allowed gap between the long-run info-slot fraction and 1 - p."""
    return (1.0 + 2.0 * d) / gamma


# -- redundant coded packets ----------------------------------------------------------------


def binom_pmf(n: int, p: float, u: int) -> float:
    """Binomial pmf evaluated in log space (safe for large n)."""
    if u < 0 or u > n:
        return 0.0
    if p == 0.0:
        return 1.0 if u == 0 else 0.0
    if p == 1.0:
        return 1.0 if u == n else 0.0
    logc = math.lgamma(n + 1) - math.lgamma(u + 1) - math.lgamma(n - u + 1)
    return math.exp(logc + u * math.log(p) + (n - u) * math.log1p(-p))


def redundancy_estimate(p: float, a_bar: float, d: int) -> float:
    """Predicted rate of coded packets sent to an already-empty receiver queue.

    Implemented exactly as the closed-form sum, including its u = 0 term, so
    it is positive even when d < 1/p (where simulation shows none are sent).
    """
    if not 0.0 < p < 1.0 or not 0.0 < a_bar <= 1.0 or d < 1:
        raise ValueError("need 0 < p < 1, 0 < a_bar <= 1 and d >= 1")
    m = math.ceil(d * p - 1e-12)
    n = math.floor(d * a_bar + 1e-12)
    return sum((m - u) / d * binom_pmf(n, p, u) for u in range(0, m + 1))


def measure_redundancy(R) -> float:
    R = np.asarray(R)
    return float(R.mean()) if R.size else 0.0


# -- queue continuity ---------------------------------------------------------------------------


def reflected(increments, q0: float = 0.0) -> np.ndarray:
    """Queue trace of ``q_{k+1} = max(q_k + w_k, 0)``, including ``q0``."""
    out = [q0]
    for w in increments:
        out.append(max(out[-1] + w, 0.0))
    return np.asarray(out)


def queue_continuity_check(w, w_tilde, delta: float, q0: float = 0.0) -> bool:
    """True unless the hypothesis holds and the conclusion fails.

    Hypothesis: every partial sum of ``w - w_tilde`` is within delta/2.
    Conclusion: the two reflected queues never differ by more than delta.
    """
    w = np.asarray(w, dtype=float)
    w_tilde = np.asarray(w_tilde, dtype=float)
    if w.shape != w_tilde.shape:
        raise ValueError("increment sequences must have equal length")
    eps = 1e-9
    if np.any(np.abs(np.cumsum(w - w_tilde)) > delta / 2 + eps):
        return True
    gap = np.abs(reflected(w, q0) - reflected(w_tilde, q0))
    return bool(gap.max(initial=0.0) <= delta + eps)
