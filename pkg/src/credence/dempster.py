"""Classical Dempster-Shafer kernel over small finite frames.

Subsets of a frame are represented as integer bitmasks (bit i set means the
i-th frame element is in the subset), which keeps all set algebra exact and
fast for frames of up to 64 elements.  Mass assignments map non-empty focal
subsets to masses that sum to one.  All mass summations use ``math.fsum`` so
results do not depend on accumulation order.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from math import fsum
from typing import Iterable, Iterator, Mapping, Sequence

MAX_FRAME_SIZE = 64
MAX_RULES = 20

# Absolute tolerance below which a normalization denominator counts as zero.
CONFLICT_TOL = 1e-12

# Tolerance on the total mass of a MassAssignment.
MASS_SUM_TOL = 1e-9


class TotalConflictError(ValueError):
    """All evidence is mutually contradictory; no mass can be assigned."""


class ZeroPlausibilityError(ValueError):
    """The conditioning event has zero plausibility under the model."""


WorldSelector = Sequence[int]


@dataclass(frozen=True)
class FiniteFrame:
    """An ordered sample space of distinct outcome identifiers."""

    elements: tuple

    def __post_init__(self):
        if not self.elements:
            raise ValueError("frame must have at least one element")
        if len(self.elements) > MAX_FRAME_SIZE:
            raise ValueError(f"frame capped at {MAX_FRAME_SIZE} elements")
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("frame elements must be unique")

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def full_mask(self) -> int:
        return (1 << self.size) - 1

    def mask_of(self, items: Iterable) -> int:
        """Bitmask of a subset given as an iterable of element identifiers."""
        index = {e: i for i, e in enumerate(self.elements)}
        mask = 0
        for item in items:
            mask |= 1 << index[item]
        return mask

    def set_of(self, mask: int) -> frozenset:
        """Subset of element identifiers encoded by ``mask``."""
        return frozenset(e for i, e in enumerate(self.elements) if mask >> i & 1)

    def subsets(self) -> Iterator[int]:
        """All ``2**size`` subset masks, in increasing numeric order."""
        return iter(range(1 << self.size))


@dataclass(frozen=True)
class CrispRuleBank:
    """K crisp rules (subsets of a frame), each weighted by a belief in [0, 1]."""

    frame: FiniteFrame
    rules: tuple
    beliefs: tuple

    def __post_init__(self):
        if len(self.rules) != len(self.beliefs):
            raise ValueError("rules and beliefs must have equal length")
        if len(self.rules) > MAX_RULES:
            raise ValueError(f"rule count capped at {MAX_RULES}")
        full = self.frame.full_mask
        for mask in self.rules:
            if not 0 <= mask <= full:
                raise ValueError("rule subset outside the frame")
        for b in self.beliefs:
            if not 0.0 <= b <= 1.0:
                raise ValueError("beliefs must lie in [0, 1]")

    @property
    def size(self) -> int:
        return len(self.rules)

    def selectors(self) -> Iterator[tuple]:
        """All 2**K world selectors, little-endian bit order."""
        k = self.size
        for idx in range(1 << k):
            yield tuple(idx >> i & 1 for i in range(k))


@dataclass(frozen=True)
class QueryResult:
    bel: float
    pl: float


def selector_probability(beliefs: Sequence[float], selector: WorldSelector) -> float:
    """Product form of the world weight for a 0/1 selector."""
    if len(beliefs) != len(selector):
        raise ValueError("selector length must match rule count")
    p = 1.0
    for b, y in zip(beliefs, selector):
        if y not in (0, 1):
            raise ValueError("selector entries must be 0 or 1")
        p *= b * y + (1.0 - b) * (1.0 - y)
    return p


def world_probability(bank: CrispRuleBank, selector: WorldSelector) -> float:
    """Probability that exactly the rules selected by ``selector`` exist."""
    return selector_probability(bank.beliefs, selector)


def intersection_mask(bank: CrispRuleBank, selector: WorldSelector) -> int:
    """Intersection of the selected rule subsets; the full frame if none selected."""
    mask = bank.frame.full_mask
    for rule, y in zip(bank.rules, selector):
        if y:
            mask &= rule
    return mask


class MassAssignment(Mapping):
    """Basic probability assignment: non-empty focal subsets with positive mass.

    Immutable mapping from subset masks to masses.  Masses must sum to one
    (within ``MASS_SUM_TOL``); zero-mass and empty-set entries are rejected.
    """

    __slots__ = ("frame", "_masses")

    def __init__(self, frame: FiniteFrame, masses: Mapping[int, float]):
        cleaned = {}
        for mask, value in masses.items():
            if mask == 0:
                raise ValueError("empty set cannot carry mass")
            if not 0 <= mask <= frame.full_mask:
                raise ValueError("focal set outside the frame")
            if value < 0.0:
                raise ValueError("mass values must be non-negative")
            if value > 0.0:
                cleaned[mask] = value
        total = fsum(cleaned.values())
        if abs(total - 1.0) > MASS_SUM_TOL:
            raise ValueError(f"masses must sum to 1, got {total!r}")
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "_masses", cleaned)

    def __setattr__(self, name, value):
        raise AttributeError("MassAssignment is immutable")

    @classmethod
    def vacuous(cls, frame: FiniteFrame) -> "MassAssignment":
        return cls(frame, {frame.full_mask: 1.0})

    def __getitem__(self, mask: int) -> float:
        return self._masses.get(mask, 0.0)

    def __iter__(self):
        return iter(self._masses)

    def __len__(self):
        return len(self._masses)

    def focal_sets(self) -> tuple:
        return tuple(sorted(self._masses))

    def bel(self, mask: int) -> float:
        """Total mass of focal sets contained in ``mask``."""
        self._check_subset(mask)
        return fsum(v for m, v in self._masses.items() if m & ~mask == 0)

    def pl(self, mask: int) -> float:
        """One minus the belief of the complement."""
        self._check_subset(mask)
        return 1.0 - self.bel(self.frame.full_mask ^ mask)

    def _check_subset(self, mask: int):
        if not 0 <= mask <= self.frame.full_mask:
            raise ValueError("subset outside the frame")


def prototype_mass(bank: CrispRuleBank) -> MassAssignment:
    """Mass assignment induced by a crisp rule bank via world enumeration.

    Each of the 2**K worlds contributes its weight to the intersection of the
    selected rules; unsatisfiable worlds (empty intersection) are discarded
    and the remainder renormalized.
    """
    groups = defaultdict(list)
    empty = []
    for selector in bank.selectors():
        p = world_probability(bank, selector)
        mask = intersection_mask(bank, selector)
        if mask == 0:
            empty.append(p)
        else:
            groups[mask].append(p)
    denominator = 1.0 - fsum(empty)
    if denominator <= CONFLICT_TOL:
        raise TotalConflictError("totally-conflicting model: no satisfiable world")
    masses = {mask: fsum(ps) / denominator for mask, ps in groups.items()}
    return MassAssignment(bank.frame, masses)


def bel(mass: MassAssignment, mask: int) -> float:
    return mass.bel(mask)


def pl(mass: MassAssignment, mask: int) -> float:
    return mass.pl(mask)


def conditional_query(bank: CrispRuleBank, condition: int, query: int) -> QueryResult:
    """Conditional belief and plausibility of ``query`` given ``condition``.

    Both values come from one pass over the 2**K worlds: the denominator sums
    weights of worlds compatible with the condition, the plausibility
    numerator those also compatible with the query, and the belief numerator
    those compatible with the query's complement.  The returned pair
    satisfies ``bel(Q|C) == 1 - pl(notQ|C)`` bit-exactly because both sides
    are the same expression over the same world sums.
    """
    full = bank.frame.full_mask
    for mask in (condition, query):
        if not 0 <= mask <= full:
            raise ValueError("subset outside the frame")
    not_query = full ^ query
    den_terms = []
    bel_terms = []
    pl_terms = []
    for selector in bank.selectors():
        p = world_probability(bank, selector)
        s = intersection_mask(bank, selector)
        if s & condition:
            den_terms.append(p)
            if s & condition & not_query:
                bel_terms.append(p)
            if s & condition & query:
                pl_terms.append(p)
    denominator = fsum(den_terms)
    if denominator <= CONFLICT_TOL:
        raise ZeroPlausibilityError("condition has zero plausibility")
    return QueryResult(
        bel=1.0 - fsum(bel_terms) / denominator,
        pl=fsum(pl_terms) / denominator,
    )


def dempster_combine(m1: MassAssignment, m2: MassAssignment) -> MassAssignment:
    """Normalized conjunctive combination of two mass assignments.

    Commutative bit-exactly: the per-focal-set term multisets are identical
    either way round and ``fsum`` is exactly rounded.
    """
    if m1.frame != m2.frame:
        raise ValueError("mass assignments must share a frame")
    groups = defaultdict(list)
    conflict = []
    for a, va in m1.items():
        for b, vb in m2.items():
            product = va * vb
            inter = a & b
            if inter == 0:
                conflict.append(product)
            else:
                groups[inter].append(product)
    normalizer = 1.0 - fsum(conflict)
    if normalizer <= CONFLICT_TOL:
        raise TotalConflictError("total conflict: all cross-intersections empty")
    masses = {mask: fsum(ps) / normalizer for mask, ps in groups.items()}
    return MassAssignment(m1.frame, masses)
