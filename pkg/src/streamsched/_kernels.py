"""Compiled slot loops for long ideal-codec runs.

These mirror :func:`streamsched.sim.step` (and the multipath engine) slot for
slot; the reference engines are the readable versions and the test-suite
checks the two produce identical traces from the same uniforms.
"""
from __future__ import annotations

import numpy as np
from numba import njit

ARQ, FEC, BLOCK, POLICY_P, WEIGHTED = 0, 1, 2, 3, 4
IDLE, INFO, CODED = 0, 1, 2
EPS = 1e-9  # q_hat sits on a grid, so ties at the threshold are real


@njit(cache=True)
def simulate_single(u, p, p_pred, a_bar, d, policy, gamma, rho, block_k, block_n, fec_ratio):
    """Run ``len(u)`` slots; ``u[k] = (arrival uniform, erasure uniform)``.

    ``d < 0`` disables feedback (the sender never hears from the receiver).
    ``fec_ratio`` is the open-loop FEC credit earned per information packet.
    """
    horizon = u.shape[0]
    A = np.zeros(horizon, np.int8)
    S = np.zeros(horizon, np.int8)
    C = np.zeros(horizon, np.int8)
    X = np.zeros(horizon, np.int8)
    R = np.zeros(horizon, np.int8)
    qt = np.zeros(horizon + 1, np.int64)
    qr = np.zeros(horizon + 1, np.int64)
    dt = np.zeros(horizon + 1, np.int64)
    qhat = np.zeros(horizon, np.float64)
    arr_slot = np.full(horizon, -1, np.int64)
    tx_slot = np.full(horizon, -1, np.int64)
    dlv_slot = np.full(horizon, -1, np.int64)
    lost = np.zeros(horizon, np.int8)
    received = np.zeros(horizon + 1, np.int8)
    missing = np.zeros(horizon + 1, np.int8)      # ARQ: erased at the receiver
    pending = np.zeros(horizon + 1, np.int8)      # ARQ: known lost, not in flight
    tx_seq = np.zeros(horizon, np.int64)          # ARQ: seq carried in each slot
    n_pending = 0
    pend_lo = 1

    n_arr = 0
    n_sent = 0
    delivered = 0
    n_s_win = 0
    n_c_win = 0
    credit = 0.0
    blk_infos = 0
    blk_coded_left = 0
    coding_start = 1
    blk_start = 1
    blk_known = 0
    blk_useful = 0
    block_failures = 0

    for k in range(horizon):
        if k >= 1:
            n_s_win += S[k - 1]
            n_c_win += C[k - 1]
            if d >= 0 and k - 1 - d >= 0:
                n_s_win -= S[k - 1 - d]
                n_c_win -= C[k - 1 - d]
        if d >= 0 and k - d >= 0:
            lag_qr = qr[k - d]
            lag_dt = dt[k - d]
        else:
            lag_qr = 0
            lag_dt = 0
        q_hat = lag_qr + n_s_win * p_pred - n_c_win * (1.0 - p_pred)
        qhat[k] = q_hat
        if policy == ARQ and d >= 0 and k - d - 1 >= 0:
            j = k - d - 1
            if X[j] and (S[j] or C[j]):
                t = tx_seq[j]
                pending[t] = 1
                n_pending += 1
                if t < pend_lo:
                    pend_lo = t

        a = 1 if u[k, 0] < a_bar else 0
        A[k] = a
        if a:
            arr_slot[n_arr] = k
            n_arr += 1
        qt_eff = qt[k] + a
        if policy == FEC or policy == BLOCK:
            window = n_sent > 0   # open-loop: the window never slides
        else:
            window = n_sent > lag_dt

        act = IDLE
        if policy == ARQ:
            if lag_qr - n_c_win > 0:
                act = CODED
                while not pending[pend_lo]:
                    pend_lo += 1
                pending[pend_lo] = 0
                n_pending -= 1
                tx_seq[k] = pend_lo
        elif policy == POLICY_P:
            if q_hat >= gamma - EPS and q_hat > EPS and window:
                act = CODED
        elif policy == WEIGHTED:
            if rho * qt[k] - q_hat <= EPS and q_hat > EPS and window:
                act = CODED
        elif policy == FEC:
            if credit >= 1.0 - 1e-9 and window:
                act = CODED
        else:
            if blk_coded_left > 0:
                act = CODED
        if act == IDLE and qt_eff >= 1:
            act = INFO

        s = 1 if act == INFO else 0
        c = 1 if act == CODED else 0
        S[k] = s
        C[k] = c
        if policy == FEC:
            if s:
                credit += fec_ratio
            elif c:
                credit -= 1.0
        closing = False
        if policy == BLOCK:
            if c:
                blk_coded_left -= 1
                closing = blk_coded_left == 0
            elif s:
                blk_infos += 1
                if blk_infos == block_k:
                    blk_infos = 0
                    blk_coded_left = block_n - block_k
                    coding_start = n_sent + 2 - block_k

        qt[k + 1] = qt[k] + a - s
        seq = 0
        if s:
            seq = n_sent + 1
            tx_slot[n_sent] = k
            n_sent += 1
            tx_seq[k] = seq

        x = 0
        if (s or c) and u[k, 1] < p:
            x = 1
        X[k] = x
        if c and qr[k] == 0:
            R[k] = 1
        q = qr[k] + s * x - c * (1 - x)
        qr[k + 1] = q if q > 0 else 0

        if policy == BLOCK:
            blk_end = blk_start + block_k - 1
            if s and not x:
                received[seq] = 1
                blk_known += 1
            elif c and not x and coding_start == blk_start:
                if blk_known + blk_useful < block_k:
                    blk_useful += 1
            if blk_useful > 0 and blk_known + blk_useful >= block_k:
                for j in range(delivered + 1, blk_end + 1):
                    dlv_slot[j - 1] = k
                delivered = blk_end
            else:
                while delivered < blk_end and received[delivered + 1]:
                    dlv_slot[delivered] = k
                    delivered += 1
            if closing and delivered < coding_start + block_k - 1:
                block_failures += 1
                for j in range(delivered + 1, blk_end + 1):
                    if received[j]:
                        dlv_slot[j - 1] = k
                    else:
                        lost[j - 1] = 1
                delivered = blk_end
            if delivered == blk_end:
                blk_start = blk_end + 1
                blk_known = 0
                blk_useful = 0
        elif policy == ARQ:
            if s and x:
                missing[seq] = 1
            elif c and not x:
                missing[tx_seq[k]] = 0
            while delivered < n_sent and not missing[delivered + 1]:
                dlv_slot[delivered] = k
                delivered += 1
        elif qr[k + 1] == 0:
            for j in range(delivered, n_sent):
                dlv_slot[j] = k
            delivered = n_sent
        dt[k + 1] = delivered

    return (A, S, C, X, R, qt, qr, dt, qhat, arr_slot[:n_arr], tx_slot[:n_arr],
            dlv_slot[:n_arr], lost[:n_arr], block_failures)


DUAL, RR_ARQ = 0, 1


@njit(cache=True)
def simulate_multipath(u_arr, u_era, p_paths, a_flows, d, alpha, scheduler):
    """Flows share edge-disjoint unit-capacity paths.

    ``u_arr[k, f]`` and ``u_era[k, i]`` are the arrival and erasure uniforms.
    Returns per-slot (flow, path) action codes, erasures, queue traces and
    per-packet slots (rows = flows, padded with -1).
    """
    horizon, F = u_arr.shape
    P = u_era.shape[1]
    thresh = 1.0 / alpha
    act = np.zeros((horizon, P), np.int8)       # IDLE / INFO / CODED per path
    owner = np.full((horizon, P), -1, np.int64)  # flow using the path
    tx_seq = np.zeros((horizon, P), np.int64)
    X = np.zeros((horizon, P), np.int8)
    A = np.zeros((horizon, F), np.int8)
    qt = np.zeros((horizon + 1, F), np.int64)
    qr = np.zeros((horizon + 1, F), np.int64)
    dt = np.zeros((horizon + 1, F), np.int64)
    qhat = np.zeros((horizon, F), np.float64)
    arr_slot = np.full((F, horizon), -1, np.int64)
    tx_slot = np.full((F, horizon), -1, np.int64)
    dlv_slot = np.full((F, horizon), -1, np.int64)
    missing = np.zeros((F, horizon + 1), np.int8)
    pending = np.zeros((F, horizon + 1), np.int8)
    pend_lo = np.ones(F, np.int64)
    n_arr = np.zeros(F, np.int64)
    n_sent = np.zeros(F, np.int64)
    delivered = np.zeros(F, np.int64)
    n_s = np.zeros((F, P), np.int64)   # in-flight counts per (flow, path)
    n_c = np.zeros((F, P), np.int64)
    order = np.argsort(p_paths, kind="mergesort")   # most reliable first
    granted = np.zeros(F, np.int64)
    infos_left = np.zeros(F, np.int64)
    qt_eff = np.zeros(F, np.int64)
    window = np.zeros(F, np.bool_)
    coding = np.zeros(F, np.bool_)
    q_cur = np.zeros(F, np.float64)   # prediction including this slot's grants

    for k in range(horizon):
        if k >= 1:
            for i in range(P):
                f = owner[k - 1, i]
                if f >= 0:
                    if act[k - 1, i] == INFO:
                        n_s[f, i] += 1
                    elif act[k - 1, i] == CODED:
                        n_c[f, i] += 1
            if d >= 0 and k - 1 - d >= 0:
                for i in range(P):
                    f = owner[k - 1 - d, i]
                    if f >= 0:
                        if act[k - 1 - d, i] == INFO:
                            n_s[f, i] -= 1
                        elif act[k - 1 - d, i] == CODED:
                            n_c[f, i] -= 1
        for f in range(F):
            lag_qr = 0
            lag_dt = 0
            if d >= 0 and k - d >= 0:
                lag_qr = qr[k - d, f]
                lag_dt = dt[k - d, f]
            q = float(lag_qr)
            for i in range(P):
                q += n_s[f, i] * p_paths[i] - n_c[f, i] * (1.0 - p_paths[i])
            qhat[k, f] = q
            q_cur[f] = q
            a = 1 if u_arr[k, f] < a_flows[f] else 0
            A[k, f] = a
            if a:
                arr_slot[f, n_arr[f]] = k
                n_arr[f] += 1
            qt_eff[f] = qt[k, f] + a
            window[f] = n_sent[f] > lag_dt
            coding[f] = q >= thresh - EPS and window[f]
            granted[f] = 0
            infos_left[f] = qt_eff[f]
        if scheduler == RR_ARQ and d >= 0 and k - d - 1 >= 0:
            j = k - d - 1
            for i in range(P):
                f = owner[j, i]
                if f >= 0 and X[j, i] and act[j, i] != IDLE:
                    t = tx_seq[j, i]
                    pending[f, t] = 1
                    if t < pend_lo[f]:
                        pend_lo[f] = t

        # allocation and per-flow decisions, most reliable path first
        for r in range(P):
            i = order[r]
            if scheduler == DUAL:
                best = -1
                best_key = 0.0
                for s in range(F):
                    f = (k + i + s) % F
                    if not (coding[f] or infos_left[f] > 0):
                        continue
                    key = q_cur[f] * (1.0 - p_paths[i])
                    if best < 0 or key > best_key + EPS:
                        best = f
                        best_key = key
                if best < 0:
                    continue
                f = best
                owner[k, i] = f
                if coding[f]:
                    act[k, i] = CODED
                    q_cur[f] -= 1.0 - p_paths[i]
                else:
                    act[k, i] = INFO
                    infos_left[f] -= 1
                    q_cur[f] += p_paths[i]
                    window[f] = True
                coding[f] = q_cur[f] >= thresh - EPS and window[f]
            else:
                f = (k + i) % F
                owner[k, i] = f
                found = False
                if d >= 0:
                    while pend_lo[f] <= n_sent[f] + granted[f] and not pending[f, pend_lo[f]]:
                        pend_lo[f] += 1
                    if pend_lo[f] <= n_sent[f] + granted[f] and pending[f, pend_lo[f]]:
                        found = True
                if found:
                    act[k, i] = CODED
                    pending[f, pend_lo[f]] = 0
                    tx_seq[k, i] = pend_lo[f]
                elif infos_left[f] > 0:
                    act[k, i] = INFO
                    infos_left[f] -= 1
                else:
                    owner[k, i] = -1
                    continue
            if act[k, i] == INFO:
                seq = n_sent[f] + granted[f] + 1
                tx_slot[f, seq - 1] = k
                tx_seq[k, i] = seq
                granted[f] += 1
        for f in range(F):
            n_sent[f] += granted[f]
            qt[k + 1, f] = qt_eff[f] - granted[f]

        # channel and receivers
        for i in range(P):
            if owner[k, i] >= 0 and u_era[k, i] < p_paths[i]:
                X[k, i] = 1
        for f in range(F):
            q = qr[k, f]
            for i in range(P):
                if owner[k, i] == f:
                    if act[k, i] == INFO:
                        q += X[k, i]
                    else:
                        q -= 1 - X[k, i]
            qr[k + 1, f] = q if q > 0 else 0
        if scheduler == DUAL:
            for f in range(F):
                if qr[k + 1, f] == 0:
                    for j in range(delivered[f], n_sent[f]):
                        dlv_slot[f, j] = k
                    delivered[f] = n_sent[f]
        else:
            for i in range(P):
                f = owner[k, i]
                if f < 0:
                    continue
                if act[k, i] == INFO and X[k, i]:
                    missing[f, tx_seq[k, i]] = 1
                elif act[k, i] == CODED and not X[k, i]:
                    missing[f, tx_seq[k, i]] = 0
            for f in range(F):
                while delivered[f] < n_sent[f] and not missing[f, delivered[f] + 1]:
                    dlv_slot[f, delivered[f]] = k
                    delivered[f] += 1
        for f in range(F):
            dt[k + 1, f] = delivered[f]

    return act, owner, X, A, qt, qr, dt, qhat, arr_slot, tx_slot, dlv_slot, n_arr
