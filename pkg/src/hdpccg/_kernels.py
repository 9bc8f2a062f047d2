"""Numba kernels for compiled charts (see chart.CompiledChart).

Log-space sums shift by the per-item maximum and accumulate in backpointer
order, matching chart.inside_weights up to floating-point rounding.
"""
import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def bp_score(b, bp_rule, bp_leafcat, bp_pos, rule_scores, leaf_scores, symbols):
    r = bp_rule[b]
    if r < 0:
        return leaf_scores[bp_leafcat[b], symbols[bp_pos[b]]]
    return rule_scores[r]


@njit(cache=True)
def inside_pass(item_ptr, bp_left, bp_right, bp_rule, bp_leafcat, bp_pos, rule_scores, leaf_scores, symbols):
    n_items = item_ptr.shape[0] - 1
    inside = np.empty(n_items)
    total = np.empty(bp_left.shape[0])
    for it in range(n_items):
        lo = item_ptr[it]
        hi = item_ptr[it + 1]
        m = NEG_INF
        for b in range(lo, hi):
            r = bp_rule[b]
            if r < 0:
                s = leaf_scores[bp_leafcat[b], symbols[bp_pos[b]]]
            else:
                s = rule_scores[r]
            if bp_left[b] >= 0:
                s += inside[bp_left[b]]
            if bp_right[b] >= 0:
                s += inside[bp_right[b]]
            total[b] = s
            if s > m:
                m = s
        if m == NEG_INF:
            inside[it] = NEG_INF
            continue
        acc = 0.0
        for b in range(lo, hi):
            acc += np.exp(total[b] - m)
        inside[it] = m + np.log(acc)
    return inside, total


@njit(cache=True)
def viterbi_pass(item_ptr, bp_left, bp_right, bp_rule, bp_leafcat, bp_pos, rule_scores, leaf_scores, symbols):
    n_items = item_ptr.shape[0] - 1
    score = np.empty(n_items)
    best = np.empty(n_items, dtype=np.int64)
    for it in range(n_items):
        lo = item_ptr[it]
        hi = item_ptr[it + 1]
        m = NEG_INF
        arg = lo
        for b in range(lo, hi):
            r = bp_rule[b]
            if r < 0:
                s = leaf_scores[bp_leafcat[b], symbols[bp_pos[b]]]
            else:
                s = rule_scores[r]
            if bp_left[b] >= 0:
                s += score[bp_left[b]]
            if bp_right[b] >= 0:
                s += score[bp_right[b]]
            if s > m:
                m = s
                arg = b
        score[it] = m
        best[it] = arg
    return score, best


@njit(cache=True)
def sample_pass(item_ptr, bp_left, bp_right, bp_total, inside, root, uniforms):
    """Pre-order list of (item, chosen backpointer) for one top-down sample."""
    cap = uniforms.shape[0]
    out_items = np.empty(cap, dtype=np.int64)
    out_bps = np.empty(cap, dtype=np.int64)
    stack = np.empty(cap, dtype=np.int64)
    sp = 0
    stack[sp] = root
    sp += 1
    k = 0
    while sp > 0:
        sp -= 1
        it = stack[sp]
        lo = item_ptr[it]
        hi = item_ptr[it + 1]
        u = uniforms[k]
        acc = 0.0
        chosen = -1
        for b in range(lo, hi):
            acc += np.exp(bp_total[b] - inside[it])
            if u < acc:
                chosen = b
                break
        if chosen < 0:
            # rounding left u above the cumulative total: take the last live edge
            for b in range(hi - 1, lo - 1, -1):
                if bp_total[b] > NEG_INF:
                    chosen = b
                    break
        out_items[k] = it
        out_bps[k] = chosen
        k += 1
        if bp_right[chosen] >= 0:
            stack[sp] = bp_right[chosen]
            sp += 1
        if bp_left[chosen] >= 0:
            stack[sp] = bp_left[chosen]
            sp += 1
    return out_items[:k], out_bps[:k]
