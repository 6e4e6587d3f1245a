"""Independent brute-force oracles used across the test suite.

Everything here is deliberately written against the raw definitions (explicit
set enumeration, plain loops, no shared code with the library) so that the
library and the oracle can only agree by both being right.
"""

from itertools import product

import numpy as np


def _bits(index, width):
    return tuple(index >> i & 1 for i in range(width))


def crisp_worlds(n_elems, rule_masks, beliefs):
    """Yield (weight, satisfying-set) for every rule subset selection."""
    universe = frozenset(range(n_elems))
    rule_sets = [frozenset(i for i in range(n_elems) if mask >> i & 1) for mask in rule_masks]
    for y in product([0, 1], repeat=len(rule_sets)):
        weight = 1.0
        for b, yi in zip(beliefs, y):
            weight *= b if yi else 1.0 - b
        satisfying = universe
        for rule, yi in zip(rule_sets, y):
            if yi:
                satisfying = satisfying & rule
        yield weight, satisfying


def crisp_mass_oracle(n_elems, rule_masks, beliefs):
    """Mass over focal bitmasks via direct world enumeration."""
    groups = {}
    empty_weight = 0.0
    for weight, sat in crisp_worlds(n_elems, rule_masks, beliefs):
        if not sat:
            empty_weight += weight
        else:
            mask = sum(1 << i for i in sat)
            groups[mask] = groups.get(mask, 0.0) + weight
    denom = 1.0 - empty_weight
    return {mask: w / denom for mask, w in groups.items() if w / denom > 0.0}


def crisp_conditional_oracle(n_elems, rule_masks, beliefs, condition_mask, query_mask):
    """Conditional (bel, pl) via direct world enumeration."""
    condition = frozenset(i for i in range(n_elems) if condition_mask >> i & 1)
    query = frozenset(i for i in range(n_elems) if query_mask >> i & 1)
    not_query = frozenset(range(n_elems)) - query
    den = beln = pln = 0.0
    for weight, sat in crisp_worlds(n_elems, rule_masks, beliefs):
        if sat & condition:
            den += weight
            if sat & condition & not_query:
                beln += weight
            if sat & condition & query:
                pln += weight
    return 1.0 - beln / den, pln / den


def fuzzy_query_oracle(rule_table, beliefs, condition_mask, query_mask):
    """Conditional (bel, pl) for fuzzy rules by direct enumeration.

    ``rule_table`` is a (K, N) array of memberships over the latent
    enumeration; ``condition_mask``/``query_mask`` are boolean (N,) arrays.
    Raises ZeroDivisionError on a zero denominator.
    """
    rule_table = np.asarray(rule_table, dtype=float)
    k, n = rule_table.shape
    den = beln = pln = 0.0
    for y in product([0, 1], repeat=k):
        weight = 1.0
        for b, yi in zip(beliefs, y):
            weight *= b if yi else 1.0 - b
        mu = np.ones(n)
        for i, yi in enumerate(y):
            if yi:
                mu = np.minimum(mu, rule_table[i])
        def fmax(mask):
            return float(mu[mask].max()) if mask.any() else 0.0
        den += weight * fmax(condition_mask)
        beln += weight * fmax(condition_mask & ~query_mask)
        pln += weight * fmax(condition_mask & query_mask)
    if den == 0.0:
        raise ZeroDivisionError("condition has zero plausibility")
    return 1.0 - beln / den, pln / den


def fuzzy_bel_oracle(rule_table, beliefs, a_membership):
    """Belief of a fuzzy set by direct world enumeration (skips void worlds)."""
    rule_table = np.asarray(rule_table, dtype=float)
    k, n = rule_table.shape
    a = np.asarray(a_membership, dtype=float)
    terms = []
    normalizer = 0.0
    for y in product([0, 1], repeat=k):
        weight = 1.0
        for b, yi in zip(beliefs, y):
            weight *= b if yi else 1.0 - b
        mu = np.ones(n)
        for i, yi in enumerate(y):
            if yi:
                mu = np.minimum(mu, rule_table[i])
        sup = float(mu.max())
        normalizer += weight * sup
        if sup > 0.0:
            inner = float(np.minimum(mu / sup, 1.0 - a).max())
            terms.append(weight * sup * (1.0 - inner))
    return sum(terms) / normalizer


def keep_probability_oracle(rule_values_at_x, beliefs):
    """Keep probability when the observation map is the identity."""
    k = len(beliefs)
    total = 0.0
    for y in product([0, 1], repeat=k):
        weight = 1.0
        for b, yi in zip(beliefs, y):
            weight *= b if yi else 1.0 - b
        mu = 1.0
        for i, yi in enumerate(y):
            if yi:
                mu = min(mu, rule_values_at_x[i])
        total += weight * mu
    return total


def single_rule_bel_oracle(membership, weight, a_membership):
    """Belief of a fuzzy set under a one-rule model over a finite point set.

    Two worlds: the rule absent (vacuous, weight 1-w) and present (weight w
    scaled by the membership supremum).  Direct transcription of the
    normalized two-world sum.
    """
    mu = np.asarray(membership, dtype=float)
    a = np.asarray(a_membership, dtype=float)
    sup = float(mu.max())
    w = float(weight)
    normalizer = (1.0 - w) + w * sup
    inner_vacuous = float((1.0 - a).max())
    total = (1.0 - w) * (1.0 - inner_vacuous)
    if sup > 0.0:
        inner = float(np.minimum(mu / sup, 1.0 - a).max())
        total += w * sup * (1.0 - inner)
    return total / normalizer


def brute_force_classical_combination(focals, weights, num_classes):
    """Mass over class subsets by enumerating all 2**K rule selections."""
    groups = {}
    empty = 0.0
    full = (1 << num_classes) - 1
    for y in product([0, 1], repeat=len(focals)):
        p = 1.0
        mask = full
        for focal, w, yi in zip(focals, weights, y):
            p *= w if yi else 1.0 - w
            if yi:
                mask &= focal
        if mask == 0:
            empty += p
        else:
            groups[mask] = groups.get(mask, 0.0) + p
    return {m: v / (1.0 - empty) for m, v in groups.items() if v > 0.0}


def central_difference_gradient(fn, x, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def relative_gradient_error(analytic, numeric, floor=1e-6):
    """Worst-coordinate relative disagreement between two gradients."""
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))
