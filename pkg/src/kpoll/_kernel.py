"""Compiled event loop shared by the polling and vacation simulators.

The loop is resumable: it returns early when a pool of pre-drawn variates
runs low (code ``c + 1`` for pool ``c``) or when a queue's buffer of
waiting-customer arrival times is full (code ``-(q + 1)``).  The caller
refills or grows the array and calls again with the same state arrays.
Code 0 means the horizon was reached.

Pools ``0..N-1`` hold interarrival times, ``N..2N-1`` service times and
``2N..3N-1`` switch-over times (compound switch-overs already summed).
"""
import numpy as np
from numba import njit

SERVING, SWITCHING, IDLE_WAIT, IDLE_ZERO = 0, 1, 2, 3

# float state slots
F_T, F_EVENT, F_STREAK_T, F_BATCH_END = 0, 1, 2, 3
# int state slots
I_MODE, I_QUEUE, I_SERVED, I_STREAK, I_EVENTS, I_BATCH = 0, 1, 2, 3, 4, 5
# scalar stat slots
S_CROSS = 0


@njit(cache=True)
def run(fs, iv, next_arr, nq, rq, buf, head, pools, pos, limits,
        horizon, warmup, nbatch, waiting_server, pair_a, pair_b,
        hist, sum_n, sum_n2, bsum, scalars,
        wsum, wsum2, wcnt, bwsum, bwcnt,
        arrivals, departures, visits, full_visits, max_served):
    N = limits.shape[0]
    C = pools.shape[1]
    cap = buf.shape[1]
    hcap = hist.shape[1] - 2
    blen = (horizon - warmup) / nbatch
    # scalar state lives in locals; written back before every return
    t = fs[F_T]
    t_event = fs[F_EVENT]
    streak_t = fs[F_STREAK_T]
    batch_end = fs[F_BATCH_END]
    mode = iv[I_MODE]
    cur = iv[I_QUEUE]
    served = iv[I_SERVED]
    streak = iv[I_STREAK]
    events = iv[I_EVENTS]
    b = iv[I_BATCH]
    cross = scalars[S_CROSS]
    code = 0
    while True:
        low = False
        for c in range(3 * N):
            if pos[c] > C - 2:
                code = c + 1
                low = True
                break
        if low:
            break
        ta = np.inf
        qa = -1
        for q in range(N):
            if next_arr[q] < ta:
                ta = next_arr[q]
                qa = q
        is_arrival = ta < t_event
        t_next = ta if is_arrival else t_event
        if t_next >= horizon:
            t_next = horizon
        elif is_arrival and rq[qa] == cap:
            code = -(qa + 1)
            break

        # time-weighted statistics over [t, t_next)
        if t_next > warmup:
            t0 = t if t > warmup else warmup
            dt = t_next - t0
            if dt > 0.0:
                for q in range(N):
                    n = nq[q]
                    hist[q, n if n <= hcap else hcap + 1] += dt
                    sum_n[q] += n * dt
                    sum_n2[q] += float(n) * n * dt
                cross += float(nq[pair_a]) * nq[pair_b] * dt
                s = t0
                while t_next > batch_end and b < nbatch - 1:
                    for q in range(N):
                        bsum[b, q] += nq[q] * (batch_end - s)
                    s = batch_end
                    b += 1
                    batch_end = warmup + (b + 1) * blen
                for q in range(N):
                    bsum[b, q] += nq[q] * (t_next - s)
        t = t_next
        if t >= horizon:
            break
        events += 1

        if is_arrival:
            q = qa
            buf[q, (head[q] + rq[q]) % cap] = t
            rq[q] += 1
            nq[q] += 1
            arrivals[q] += 1
            next_arr[q] = t + pools[q, pos[q]]
            pos[q] += 1
            if mode == IDLE_WAIT:
                # leave the preceding queue towards q
                p = (q - 1) % N
                mode = SWITCHING
                cur = p
                t_event = t + pools[2 * N + p, pos[2 * N + p]]
                pos[2 * N + p] += 1
                continue
            elif mode != IDLE_ZERO:
                continue
            # idle with a zero-length cycle: visit q at once
            cur = q
            served = 0
            streak = 0
        elif mode == SERVING:
            nq[cur] -= 1
            departures[cur] += 1
            served += 1
            if not (served < limits[cur] and rq[cur] > 0):
                visits[cur] += 1
                if served == limits[cur]:
                    full_visits[cur] += 1
                if served > max_served[cur]:
                    max_served[cur] = served
                streak = 0
                mode = SWITCHING
                t_event = t + pools[2 * N + cur, pos[2 * N + cur]]
                pos[2 * N + cur] += 1
                continue
        else:
            # switch-over completed; start a visit at the next queue
            cur = (cur + 1) % N
            served = 0
            if rq[cur] == 0:
                visits[cur] += 1
                if streak > 0 and streak_t == t:
                    streak += 1
                else:
                    streak = 1
                    streak_t = t
                if streak > N:
                    # a full cycle of empty visits took no time
                    mode = IDLE_ZERO
                    t_event = np.inf
                    continue
                if waiting_server:
                    empty = True
                    for m in range(N):
                        if nq[m] > 0:
                            empty = False
                    if empty:
                        mode = IDLE_WAIT
                        t_event = np.inf
                        continue
                mode = SWITCHING
                t_event = t + pools[2 * N + cur, pos[2 * N + cur]]
                pos[2 * N + cur] += 1
                continue

        # start service of the head-of-line customer at `cur`
        a = buf[cur, head[cur]]
        head[cur] = (head[cur] + 1) % cap
        rq[cur] -= 1
        if t >= warmup:
            w = t - a
            wsum[cur] += w
            wsum2[cur] += w * w
            wcnt[cur] += 1
            bwsum[b, cur] += w
            bwcnt[b, cur] += 1
        mode = SERVING
        t_event = t + pools[N + cur, pos[N + cur]]
        pos[N + cur] += 1

    fs[F_T] = t
    fs[F_EVENT] = t_event
    fs[F_STREAK_T] = streak_t
    fs[F_BATCH_END] = batch_end
    iv[I_MODE] = mode
    iv[I_QUEUE] = cur
    iv[I_SERVED] = served
    iv[I_STREAK] = streak
    iv[I_EVENTS] = events
    iv[I_BATCH] = b
    scalars[S_CROSS] = cross
    return code
