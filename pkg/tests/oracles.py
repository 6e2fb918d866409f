"""Independent brute-force reference implementations used by the tests.

None of these import the code under test beyond plain record types; they
favour obviousness over speed.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from apricot.records import HEADS, AcuityState, Disposition


# ---------------------------------------------------------------------------
# model


def param_count(c) -> int:
    """Closed-form parameter count summed layer by layer from the architecture."""
    d, e, n, k, kk = c.d_model, c.expand * c.d_model, c.d_state, c.conv_width, c.embed_conv_width
    r = c.dt_rank or math.ceil(d / 16)
    h, f, v, s = c.mlp_hidden, c.fused_dim, c.vocab_size, c.n_static
    block = 2 * d + 2 * d * e + k * e + e + e * (r + 2 * n) + r * e + e + e * n + e + e * d
    return (2 * (kk * d + d) + v * d + c.n_blocks * block + 2 * d
            + (d * h + h + h * f + f) + (s * f + f + f * f + f) + 9 * (2 * f + 1))


# ---------------------------------------------------------------------------
# scan


def naive_scan(u, a_bar, b_bar, c, d):
    """Element-by-element recurrence h_t = a_t h_{t-1} + b_t u_t, y_t = c_t . h_t + d u_t."""
    bsz, n_steps, dim = u.shape
    n_state = a_bar.shape[-1]
    y = np.zeros((bsz, n_steps, dim))
    for b in range(bsz):
        for i in range(dim):
            h = [0.0] * n_state
            for t in range(n_steps):
                acc = 0.0
                for n in range(n_state):
                    h[n] = a_bar[b, t, i, n] * h[n] + b_bar[b, t, i, n] * u[b, t, i]
                    acc += c[b, t, n] * h[n]
                y[b, t, i] = acc + d[i] * u[b, t, i]
    return y


def naive_causal_conv(x, w, bias):
    """x[B, L, Cin], w[K, Cin, Cout]; output t sees inputs t-K+1..t (zero before 0)."""
    bsz, n, cin = x.shape
    k, _, cout = w.shape
    out = np.zeros((bsz, n, cout))
    for b in range(bsz):
        for t in range(n):
            for j in range(k):
                src = t - (k - 1) + j
                if src >= 0:
                    out[b, t] += x[b, src] @ w[j]
    return out + (0 if bias is None else bias)


def naive_topk_mean(x, k, mask):
    bsz, n, c = x.shape
    out = np.zeros((bsz, c))
    for b in range(bsz):
        real = [t for t in range(n) if mask[b, t]]
        for ch in range(c):
            vals = sorted((x[b, t, ch] for t in real), reverse=True)[:k]
            out[b, ch] = sum(vals) / len(vals) if vals else 0.0
    return out


# ---------------------------------------------------------------------------
# decision cascade


def cascade(bits) -> AcuityState:
    named = dict(zip(HEADS, bits))
    if named["deceased"]:
        return AcuityState.DECEASED
    for h in ("unstable", "stable_to_unstable", "mv", "vp", "crrt"):
        if named[h]:
            return AcuityState.UNSTABLE
    if named["discharge"]:
        return AcuityState.DISCHARGE
    return AcuityState.STABLE


# ---------------------------------------------------------------------------
# phenotype


def bt_active_at(transfusions, tau, units=10.0, horizon=24.0):
    """Trailing-window unit total at each ``tau`` (scalar or array) reaches ``units``."""
    tau = np.asarray(tau, dtype=float)
    total = np.zeros_like(tau)
    for e, u in transfusions:
        total = total + np.where((e <= tau) & (tau < e + horizon), u, 0.0)
    return total >= units - 1e-9


def _active_points(adm, taus):
    active = bt_active_at(adm.transfusion_events, taus)
    for ivs in adm.therapy_intervals.values():
        for s, e in ivs:
            active |= (s <= taus) & (taus < e)
    return active


def grid_states(adm, window_h=4.0, step=0.01):
    """States by sampling every window at ``step``-spaced midpoints."""
    n = max(1, math.ceil(adm.los_h / window_h - 1e-12))
    states = []
    for w in range(n):
        lo, hi = w * window_h, min((w + 1) * window_h, adm.los_h)
        taus = np.arange(lo + step / 2, hi, step)
        active = bool(_active_points(adm, taus).any())
        states.append(AcuityState.UNSTABLE if active else AcuityState.STABLE)
    states[-1] = AcuityState.DECEASED if adm.disposition == Disposition.DECEASED else AcuityState.DISCHARGE
    return states


def grid_activity(intervals, los_h, window_h=4.0, step=0.01):
    n = max(1, math.ceil(los_h / window_h - 1e-12))
    out = []
    for w in range(n):
        lo, hi = w * window_h, min((w + 1) * window_h, los_h)
        taus = np.arange(lo + step / 2, hi, step)
        out.append(any(bool(((s <= taus) & (taus < e)).any()) for s, e in intervals))
    return np.array(out)


def bt_grid_intervals(transfusions, los_h, step=0.25):
    """BT intervals on a grid, for event times that are multiples of ``step``."""
    taus = np.arange(0.0, los_h, step)
    out = []
    for tau in taus:
        if bool(bt_active_at(transfusions, tau + step / 2)):
            if out and abs(out[-1][1] - tau) < 1e-9:
                out[-1][1] = min(tau + step, los_h)
            else:
                out.append([tau, min(tau + step, los_h)])
    return [tuple(x) for x in out]


def scan_labels(states, activity):
    rows = []
    for t in range(len(states) - 1):
        cur, nxt = states[t], states[t + 1]
        row = {h: 0 for h in HEADS}
        row[nxt.name.lower()] = 1
        row["stable_to_unstable"] = int(cur == AcuityState.STABLE and nxt == AcuityState.UNSTABLE)
        row["unstable_to_stable"] = int(cur == AcuityState.UNSTABLE and nxt == AcuityState.STABLE)
        for th in ("MV", "VP", "CRRT"):
            row[th.lower()] = int(bool(activity[th][t + 1]) and not bool(activity[th][t]))
        rows.append([row[h] for h in HEADS])
    return np.array(rows, dtype=np.int8).reshape(-1, len(HEADS))


# ---------------------------------------------------------------------------
# metrics


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def sweep_youden(scores, labels):
    """Best J over every observed threshold with the rule score >= t; smallest t on ties."""
    scores = list(scores)
    labels = [bool(y) for y in labels]
    p = sum(labels)
    n = len(labels) - p
    best_t, best_num = None, None
    for t in sorted(set(scores)):
        tp = sum(1 for s, y in zip(scores, labels) if y and s >= t)
        tn = sum(1 for s, y in zip(scores, labels) if not y and s < t)
        num = tp * n + tn * p - p * n
        if best_num is None or num > best_num:
            best_t, best_num = t, num
    return best_t, best_num / (p * n)


def enumerate_ap(scores, labels):
    """Average precision by walking distinct thresholds from high to low."""
    p = sum(labels)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if y and s >= t)
        k = sum(1 for s in scores if s >= t)
        recall = tp / p
        ap += (recall - prev_recall) * (tp / k)
        prev_recall = recall
    return ap


def exact_ranksum_p(a, b):
    """Two-sided exact p by enumerating every assignment of pooled values to group a."""
    pooled = list(a) + list(b)
    n = len(pooled)
    order = sorted(range(n), key=lambda i: pooled[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    obs = sum(ranks[: len(a)])
    mean = len(a) * (n + 1) / 2
    sums = [sum(ranks[i] for i in c) for c in itertools.combinations(range(n), len(a))]
    return sum(abs(s - mean) >= abs(obs - mean) - 1e-9 for s in sums) / len(sums)


# ---------------------------------------------------------------------------
# isotonic regression


def best_monotone_fit(scores, labels):
    """Least-squares nondecreasing fit by trying every contiguous block partition.

    Tied scores share one fitted value. Any optimal monotone fit is constant
    on blocks at the block mean, so enumerating the 2^(m-1) partitions of the
    m distinct scores is exhaustive. Returns (distinct scores, fitted values, sse).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    xs = sorted(set(scores.tolist()))
    groups = [labels[scores == x] for x in xs]
    m = len(xs)
    best, best_fit = math.inf, None
    for cuts in itertools.product([False, True], repeat=m - 1):
        blocks, cur = [], [0]
        for i, cut in enumerate(cuts, start=1):
            if cut:
                blocks.append(cur)
                cur = [i]
            else:
                cur.append(i)
        blocks.append(cur)
        fit = np.zeros(m)
        for blk in blocks:
            vals = np.concatenate([groups[i] for i in blk])
            fit[blk] = vals.mean()
        if np.any(np.diff(fit) < -1e-12):
            continue
        sse = sum(float(np.sum((groups[i] - fit[i]) ** 2)) for i in range(m))
        if sse < best - 1e-12:
            best, best_fit = sse, fit
    return np.asarray(xs), best_fit, best


# ---------------------------------------------------------------------------
# analysis


def tally_confusion(pred, true):
    m = np.zeros((4, 4))
    for p, t in zip(pred, true):
        m[int(p), int(t)] += 1
    col = m.sum(axis=0)
    for j in range(4):
        if col[j]:
            m[:, j] /= col[j]
    return m


def scan_leads(preds, labels, keys, window_h=4.0, horizon_h=4.0):
    """Per-FP signed lead by scanning each admission; returns (leads, adjusted, fp_without)."""
    leads, adjusted, without = [], 0, 0
    for i in range(len(preds)):
        if not preds[i] or labels[i]:
            continue
        mine = [j for j in range(len(preds)) if keys[j] == keys[i]]
        pos = [j for j in mine if labels[j]]
        if not pos:
            without += 1
            continue
        offset = mine.index(i)
        later = [mine.index(j) for j in pos if mine.index(j) > offset]
        target = later[0] if later else mine.index(pos[-1])
        lead = (target - offset) * window_h
        leads.append(lead)
        adjusted += lead >= horizon_h
    return leads, adjusted, without


# ---------------------------------------------------------------------------
# cohort


def interp_percentile(values, q):
    """Sort, then interpolate linearly between the order statistics at rank q/100 * (n - 1)."""
    xs = sorted(values)
    pos = q / 100 * (len(xs) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


def window_membership(times, n_windows, window_h=4.0):
    """(window, event index) pairs by testing each event against each [4t, 4t+4) interval."""
    pairs = []
    for t in range(n_windows):
        for i, tau in enumerate(times):
            if t * window_h <= tau < (t + 1) * window_h:
                pairs.append((t, i))
    return sorted(pairs)
