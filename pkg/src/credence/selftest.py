"""Built-in invariant suites, runnable without a test framework.

These are quick seeded spot checks of the load-bearing identities: query
duality in the classical kernel, bit-exact crisp reduction of the fuzzy
query path, gradient correctness against finite differences, and the
classical combination against brute-force world enumeration.  The full
verification lives in the test suite; this exists so a deployed install can
vouch for itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import autodiff as ad
from .dempster import (
    CrispRuleBank,
    FiniteFrame,
    MassAssignment,
    TotalConflictError,
    ZeroPlausibilityError,
    conditional_query,
    dempster_combine,
    prototype_mass,
    world_probability,
)
from .engine import BitCondition, CrispSetRule, IdentityMap, LatentSpace, NbrModel


@dataclass
class SelfTestReport:
    lines: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = True

    def record(self, name: str, ok: bool, detail: str = "") -> None:
        self.lines.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f": {detail}" if detail else ""))
        self.summary[name] = bool(ok)
        self.passed &= ok


def _random_bank(rng, n_elems, k) -> CrispRuleBank:
    frame = FiniteFrame(tuple(range(n_elems)))
    return CrispRuleBank(
        frame=frame,
        rules=tuple(int(rng.integers(0, frame.full_mask + 1)) for _ in range(k)),
        beliefs=tuple(float(b) for b in rng.random(k)),
    )


def _check_duality(rng, report):
    ok = True
    tried = 0
    for _ in range(60):
        bank = _random_bank(rng, int(rng.integers(2, 6)), int(rng.integers(0, 5)))
        full = bank.frame.full_mask
        query = int(rng.integers(1, full + 1))
        try:
            straight = conditional_query(bank, full, query)
            flipped = conditional_query(bank, full, full ^ query)
        except ZeroPlausibilityError:
            continue
        tried += 1
        ok &= straight.bel == 1.0 - flipped.pl
        ok &= abs(straight.pl - (1.0 - flipped.bel)) < 1e-12
        ok &= -1e-15 <= straight.bel <= straight.pl <= 1.0 + 1e-15
        total = sum(world_probability(bank, y) for y in bank.selectors())
        ok &= abs(total - 1.0) < 1e-9
    report.record("classical query duality", ok and tried > 20, f"{tried} instances")


def _check_crisp_reduction(rng, report):
    ok = True
    checked = 0
    for dim in (2, 3, 4):
        frame = FiniteFrame(tuple(range(1 << dim)))
        for k in (0, 2, 4):
            bank = _random_bank(rng, 1 << dim, k)
            tables = [
                [(mask >> i) & 1 for i in range(1 << dim)] for mask in bank.rules
            ]
            model = NbrModel(
                LatentSpace(dim),
                IdentityMap(dim),
                tuple(CrispSetRule(t, dim) for t in tables),
                bank.beliefs,
            )
            x_table, z_table = model.x_table(), model.latent_points()
            for _ in range(4):
                condition = BitCondition((("x", int(rng.integers(0, dim)), int(rng.integers(0, 2))),))
                proposition = BitCondition((("x", int(rng.integers(0, dim)), int(rng.integers(0, 2))),))
                c_mask = int(sum(1 << i for i in np.flatnonzero(condition.mask(x_table, z_table))))
                q_mask = int(sum(1 << i for i in np.flatnonzero(proposition.mask(x_table, z_table))))
                try:
                    classical = conditional_query(bank, c_mask, q_mask)
                except ZeroPlausibilityError:
                    continue
                fuzzy = model.query(condition, proposition)
                ok &= fuzzy.bel == classical.bel and fuzzy.pl == classical.pl
                checked += 1
    report.record("crisp reduction is bit-exact", ok and checked > 20, f"{checked} queries")


def _check_gradients(rng, report):
    net = ad.Mlp([3, 6, 1], rng=rng)
    x = rng.normal(size=(5, 3))
    target = rng.normal(size=(5, 1))
    params = net.parameters

    def loss_fn(param_vars):
        diff = ad.sub(net.forward_var(x, param_vars), target)
        return ad.vmean(ad.mul(diff, diff))

    _, grads = ad.gradient_of(loss_fn, params)
    worst = 0.0
    h = 1e-5
    for index, p in enumerate(params):
        flat = p.ravel()
        for j in range(0, flat.size, max(1, flat.size // 5)):
            original = flat[j]
            flat[j] = original + h
            up = loss_fn([ad.Var(q) for q in params]).item()
            flat[j] = original - h
            down = loss_fn([ad.Var(q) for q in params]).item()
            flat[j] = original
            numeric = (up - down) / (2 * h)
            analytic = grads[index].ravel()[j]
            scale = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / scale)
    report.record("gradients match finite differences", worst <= 1e-3, f"worst {worst:.2e}")


def _check_combination(rng, report):
    ok = True
    for _ in range(40):
        k = int(rng.integers(1, 9))
        num_classes = 2
        frame = FiniteFrame(tuple(range(num_classes)))
        focals = [int(rng.integers(1, (1 << num_classes))) for _ in range(k)]
        weights = [float(w) for w in rng.uniform(0.0, 0.95, size=k)]
        combined = MassAssignment.vacuous(frame)
        try:
            for focal, weight in zip(focals, weights):
                if weight == 0.0:
                    continue
                masses = {focal: weight}
                if weight < 1.0:
                    masses[frame.full_mask] = masses.get(frame.full_mask, 0.0) + 1.0 - weight
                combined = dempster_combine(combined, MassAssignment(frame, masses))
        except TotalConflictError:
            continue
        bank = CrispRuleBank(frame=frame, rules=tuple(focals), beliefs=tuple(weights))
        try:
            brute = prototype_mass(bank)
        except TotalConflictError:
            ok = False
            continue
        ok &= set(combined) == set(brute)
        for mask in combined:
            ok &= abs(combined[mask] - brute[mask]) < 1e-9
    report.record("fold combination matches brute force", ok)


def _check_mass_invariants(rng, report):
    ok = True
    for _ in range(40):
        bank = _random_bank(rng, int(rng.integers(2, 6)), int(rng.integers(0, 6)))
        try:
            mass = prototype_mass(bank)
        except TotalConflictError:
            continue
        total = sum(mass.values())
        ok &= abs(total - 1.0) < 1e-9
        for subset in range(bank.frame.full_mask + 1):
            ok &= mass.bel(subset) <= mass.pl(subset) + 1e-12
    report.record("mass normalization and bel below pl", ok)


def run_selftest(seed: int = 0) -> SelfTestReport:
    report = SelfTestReport()
    rng = np.random.default_rng(seed)
    _check_duality(rng, report)
    _check_crisp_reduction(rng, report)
    _check_gradients(rng, report)
    _check_combination(rng, report)
    _check_mass_invariants(rng, report)
    report.lines.append(f"selftest: {'PASS' if report.passed else 'FAIL'}")
    return report
