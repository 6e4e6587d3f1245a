"""Tests for the crisp Dempster-Shafer kernel.

Expected values for the worked examples were computed with the independent
fraction-exact enumeration oracle in ``oracles.py`` (direct transcription of
the mass and conditional-query definitions over frozensets) and then frozen
here as literals.
"""

import math
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from credence.dempster import (
    CrispRuleBank,
    FiniteFrame,
    MassAssignment,
    TotalConflictError,
    ZeroPlausibilityError,
    conditional_query,
    dempster_combine,
    intersection_mask,
    prototype_mass,
    world_probability,
)

from oracles import crisp_conditional_oracle, crisp_mass_oracle

ABC = FiniteFrame(("a", "b", "c"))
AB = FiniteFrame(("a", "b"))


def abc_bank():
    return CrispRuleBank(
        frame=ABC,
        rules=(ABC.mask_of("ab"), ABC.mask_of("bc")),
        beliefs=(0.6, 0.5),
    )


@st.composite
def rule_banks(draw, max_elems=6, max_rules=6):
    n = draw(st.integers(1, max_elems))
    frame = FiniteFrame(tuple(range(n)))
    k = draw(st.integers(0, max_rules))
    rules = tuple(draw(st.integers(0, frame.full_mask)) for _ in range(k))
    beliefs = tuple(
        draw(st.floats(0.0, 1.0, allow_nan=False, allow_infinity=False))
        for _ in range(k)
    )
    return CrispRuleBank(frame=frame, rules=rules, beliefs=beliefs)


class TestWorldProbability:
    def test_empty_bank(self):
        bank = CrispRuleBank(frame=AB, rules=(), beliefs=())
        assert world_probability(bank, ()) == 1.0

    def test_direct_product(self):
        bank = CrispRuleBank(frame=AB, rules=(1, 2), beliefs=(0.6, 0.5))
        assert world_probability(bank, (1, 0)) == pytest.approx(0.30)
        total = math.fsum(world_probability(bank, y) for y in bank.selectors())
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_certain_rule_never_absent(self):
        bank = CrispRuleBank(frame=AB, rules=(1,), beliefs=(1.0,))
        assert world_probability(bank, (0,)) == 0.0

    def test_length_mismatch(self):
        bank = CrispRuleBank(frame=AB, rules=(1,), beliefs=(0.5,))
        with pytest.raises(ValueError):
            world_probability(bank, (1, 0))

    @given(rule_banks())
    @settings(max_examples=60, deadline=None)
    def test_selector_weights_sum_to_one(self, bank):
        total = math.fsum(world_probability(bank, y) for y in bank.selectors())
        assert total == pytest.approx(1.0, abs=1e-9)


class TestPrototypeMass:
    def test_worked_example(self):
        m = prototype_mass(abc_bank())
        assert m[ABC.full_mask] == pytest.approx(0.2)
        assert m[ABC.mask_of("ab")] == pytest.approx(0.3)
        assert m[ABC.mask_of("bc")] == pytest.approx(0.2)
        assert m[ABC.mask_of("b")] == pytest.approx(0.3)

    def test_empty_world_renormalized(self):
        bank = CrispRuleBank(frame=AB, rules=(1, 2), beliefs=(0.5, 0.5))
        m = prototype_mass(bank)
        third = 1.0 / 3.0
        assert m[AB.full_mask] == pytest.approx(third)
        assert m[1] == pytest.approx(third)
        assert m[2] == pytest.approx(third)

    def test_no_rules_is_vacuous(self):
        bank = CrispRuleBank(frame=ABC, rules=(), beliefs=())
        m = prototype_mass(bank)
        assert dict(m.items()) == {ABC.full_mask: 1.0}

    def test_total_conflict(self):
        bank = CrispRuleBank(frame=AB, rules=(1, 2), beliefs=(1.0, 1.0))
        with pytest.raises(TotalConflictError):
            prototype_mass(bank)

    def test_certain_consistent_rules_intersect(self):
        bank = CrispRuleBank(
            frame=ABC,
            rules=(ABC.mask_of("ab"), ABC.mask_of("b")),
            beliefs=(1.0, 1.0),
        )
        m = prototype_mass(bank)
        assert m.focal_sets() == (ABC.mask_of("b"),)

    @given(rule_banks())
    @settings(max_examples=80, deadline=None)
    def test_matches_oracle_and_sums_to_one(self, bank):
        try:
            m = prototype_mass(bank)
        except TotalConflictError:
            return
        assert math.fsum(m.values()) == pytest.approx(1.0, abs=1e-9)
        oracle = crisp_mass_oracle(bank.frame.size, bank.rules, bank.beliefs)
        assert set(m) == set(oracle)
        for mask, value in oracle.items():
            assert m[mask] == pytest.approx(value, abs=1e-12)


class TestBelPl:
    def test_vacuous(self):
        m = MassAssignment.vacuous(ABC)
        for mask in range(ABC.full_mask):
            assert m.bel(mask) == 0.0
            if mask:
                assert m.pl(mask) == 1.0
        assert m.bel(ABC.full_mask) == 1.0

    def test_worked_example_singleton(self):
        m = prototype_mass(abc_bank())
        assert m.bel(ABC.mask_of("b")) == pytest.approx(0.3)
        assert m.pl(ABC.mask_of("b")) == pytest.approx(1.0)

    def test_worked_example_pair(self):
        # Every focal set of this bank contains b, so pl({a,b}) is exactly 1:
        # bel({c}) sums masses of subsets of {c}, of which there are none.
        m = prototype_mass(abc_bank())
        assert m.bel(ABC.mask_of("ab")) == pytest.approx(0.6)
        assert m.pl(ABC.mask_of("ab")) == pytest.approx(1.0)
        assert m.bel(ABC.mask_of("c")) == 0.0

    @given(rule_banks())
    @settings(max_examples=60, deadline=None)
    def test_bel_below_pl_everywhere(self, bank):
        try:
            m = prototype_mass(bank)
        except TotalConflictError:
            return
        assert m.bel(0) == 0.0
        assert m.bel(bank.frame.full_mask) == pytest.approx(1.0, abs=1e-9)
        for mask in bank.frame.subsets():
            assert m.bel(mask) <= m.pl(mask) + 1e-12


class TestConditionalQuery:
    def test_trivial_full_condition(self):
        r = conditional_query(abc_bank(), ABC.full_mask, ABC.full_mask)
        assert r.bel == 1.0
        assert r.pl == 1.0

    def test_unconditioned_matches_mass(self):
        bank = abc_bank()
        m = prototype_mass(bank)
        for mask in bank.frame.subsets():
            if mask == 0:
                continue
            r = conditional_query(bank, ABC.full_mask, mask)
            assert r.bel == pytest.approx(m.bel(mask), abs=1e-12)
            assert r.pl == pytest.approx(m.pl(mask), abs=1e-12)

    def test_worked_example(self):
        # Oracle (fraction-exact world enumeration): bel = 3/7, pl = 5/7.
        r = conditional_query(abc_bank(), ABC.mask_of("ac"), ABC.mask_of("a"))
        assert r.bel == pytest.approx(3.0 / 7.0, abs=1e-12)
        assert r.pl == pytest.approx(5.0 / 7.0, abs=1e-12)

    def test_zero_plausibility_condition(self):
        bank = CrispRuleBank(frame=AB, rules=(1,), beliefs=(1.0,))
        with pytest.raises(ZeroPlausibilityError):
            conditional_query(bank, 2, 2)

    @given(rule_banks())
    @settings(max_examples=60, deadline=None)
    def test_duality_and_oracle(self, bank):
        full = bank.frame.full_mask
        for condition, query in [(full, 1), (1, 1), (full ^ 1 or full, 1)]:
            try:
                r = conditional_query(bank, condition, query)
            except ZeroPlausibilityError:
                continue
            flipped = conditional_query(bank, condition, full ^ query)
            # Constructive duality: bel is literally 1 - pl(complement), so
            # this direction is the same float expression and holds bit-exactly.
            assert r.bel == 1.0 - flipped.pl
            # The reverse direction re-complements and can pick up one ulp.
            assert r.pl == pytest.approx(1.0 - flipped.bel, abs=4e-16)
            ob, op = crisp_conditional_oracle(
                bank.frame.size, bank.rules, bank.beliefs, condition, query
            )
            assert r.bel == pytest.approx(ob, abs=1e-12)
            assert r.pl == pytest.approx(op, abs=1e-12)
            assert 0.0 <= r.bel <= r.pl + 1e-15
            assert r.pl <= 1.0 + 1e-15


class TestDempsterCombine:
    def test_vacuous_is_identity(self):
        m = prototype_mass(abc_bank())
        combined = dempster_combine(m, MassAssignment.vacuous(ABC))
        assert dict(combined.items()) == dict(m.items())

    def test_worked_example(self):
        m = MassAssignment(AB, {1: 0.5, AB.full_mask: 0.5})
        combined = dempster_combine(m, m)
        assert combined[1] == pytest.approx(0.75)
        assert combined[AB.full_mask] == pytest.approx(0.25)

    def test_total_conflict(self):
        m1 = MassAssignment(AB, {1: 1.0})
        m2 = MassAssignment(AB, {2: 1.0})
        with pytest.raises(TotalConflictError):
            dempster_combine(m1, m2)

    @given(rule_banks(max_elems=4, max_rules=3), st.randoms(use_true_random=False))
    @settings(max_examples=50, deadline=None)
    def test_commutative_exact_associative_close(self, bank, rnd):
        def random_mass(frame):
            focals = [m for m in frame.subsets() if m]
            picked = rnd.sample(focals, k=min(len(focals), rnd.randint(1, 3)))
            weights = [rnd.random() + 1e-3 for _ in picked]
            total = math.fsum(weights)
            return MassAssignment(frame, {m: w / total for m, w in zip(picked, weights)})

        frame = bank.frame
        m1, m2, m3 = (random_mass(frame) for _ in range(3))
        try:
            ab = dempster_combine(m1, m2)
            ba = dempster_combine(m2, m1)
        except TotalConflictError:
            return
        assert dict(ab.items()) == dict(ba.items())
        try:
            left = dempster_combine(ab, m3)
            right = dempster_combine(m1, dempster_combine(m2, m3))
        except TotalConflictError:
            return
        assert set(left) == set(right)
        for mask in left:
            assert left[mask] == pytest.approx(right[mask], abs=1e-12)


class TestValidation:
    def test_frame_rejects_duplicates(self):
        with pytest.raises(ValueError):
            FiniteFrame(("a", "a"))

    def test_frame_rejects_empty(self):
        with pytest.raises(ValueError):
            FiniteFrame(())

    def test_mass_rejects_empty_focal(self):
        with pytest.raises(ValueError):
            MassAssignment(AB, {0: 1.0})

    def test_mass_rejects_bad_total(self):
        with pytest.raises(ValueError):
            MassAssignment(AB, {1: 0.4, 2: 0.4})

    def test_mass_drops_zero_entries(self):
        m = MassAssignment(AB, {1: 1.0, 2: 0.0})
        assert set(m) == {1}

    def test_bank_b_zero_rules_kept(self):
        bank = CrispRuleBank(frame=AB, rules=(1,), beliefs=(0.0,))
        assert bank.size == 1
        m = prototype_mass(bank)
        assert dict(m.items()) == {AB.full_mask: 1.0}

    def test_intersection_of_nothing_is_frame(self):
        bank = CrispRuleBank(frame=ABC, rules=(1, 2), beliefs=(0.5, 0.5))
        assert intersection_mask(bank, (0, 0)) == ABC.full_mask


def all_subsets(frame):
    return list(frame.subsets())


def test_certain_consistent_bank_focuses_on_intersection():
    for masks in product([3, 5, 6, 7], repeat=2):
        inter = masks[0] & masks[1]
        bank = CrispRuleBank(frame=ABC, rules=masks, beliefs=(1.0, 1.0))
        if inter == 0:
            with pytest.raises(TotalConflictError):
                prototype_mass(bank)
        else:
            m = prototype_mass(bank)
            assert m.focal_sets() == (inter,)
            assert m[inter] == 1.0
