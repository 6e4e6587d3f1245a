"""Fuzzy-rule belief models over an enumerable binary latent space.

A model combines an observation map ``F`` from latent bit-vectors to
observation bit-vectors, ``K`` fuzzy rules (membership functions on the
latent space), and per-rule Bernoulli weights.  The ``2**K`` possible worlds
mix rule subsets; queries, belief values, and sample-keep probabilities are
all computed by exact enumeration of latent points and worlds, which is the
whole point of this desk-scale implementation: every number is checkable.

When every rule is crisp (outputs only 0 and 1) the query path reduces
bit-exactly to the classical kernel in ``credence.dempster``: both sides sum
the same world weights with ``fsum``, in the same world order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from math import fsum
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Mlp
from .dempster import (
    CONFLICT_TOL,
    QueryResult,
    TotalConflictError,
    ZeroPlausibilityError,
    selector_probability,
)

MAX_LATENT_DIM = 20
MAX_FUZZY_RULES = 20


class QueryParseError(ValueError):
    """The query text does not follow the bit-constraint grammar."""


class SamplingStalledError(RuntimeError):
    """Rejection sampling accepted nothing over the stall window."""


def enumerate_bits(dim: int) -> np.ndarray:
    """All ``2**dim`` bit-vectors; row ``i`` holds the bits of integer ``i``."""
    if not 1 <= dim <= MAX_LATENT_DIM:
        raise ValueError(f"dimension must be in 1..{MAX_LATENT_DIM}")
    indices = np.arange(1 << dim, dtype=np.int64)
    return (indices[:, None] >> np.arange(dim)[None, :] & 1).astype(np.uint8)


def bits_to_indices(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    weights = np.int64(1) << np.arange(bits.shape[-1], dtype=np.int64)
    return bits.astype(np.int64) @ weights


@dataclass(frozen=True)
class LatentSpace:
    """Exact enumeration of all bit-vectors of a given dimension."""

    dimension: int

    def __post_init__(self):
        if not 1 <= self.dimension <= MAX_LATENT_DIM:
            raise ValueError(f"latent dimension must be in 1..{MAX_LATENT_DIM}")

    @property
    def size(self) -> int:
        return 1 << self.dimension

    def points(self) -> np.ndarray:
        return enumerate_bits(self.dimension)


class Rule:
    """A fuzzy membership function evaluated on batches of latent points."""

    def values(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, points: np.ndarray) -> np.ndarray:
        out = np.clip(np.asarray(self.values(points), dtype=np.float64), 0.0, 1.0)
        if out.shape != (len(points),):
            raise ValueError("rule must return one value per point")
        return out


class TableRule(Rule):
    """Membership stored as a table over the full enumeration of a dimension."""

    def __init__(self, table: Sequence[float], dimension: int):
        self.dimension = dimension
        self.table = np.asarray(table, dtype=np.float64)
        if self.table.shape != (1 << dimension,):
            raise ValueError("table length must be 2**dimension")

    def values(self, points):
        return self.table[bits_to_indices(points)]


class CrispSetRule(TableRule):
    """Indicator of a subset of the enumeration, given as a boolean table."""

    def __init__(self, member: Sequence[bool], dimension: int):
        super().__init__(np.asarray(member, dtype=bool).astype(np.float64), dimension)


class FunctionRule(Rule):
    """Membership computed by an arbitrary vectorized function."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "function"):
        self.fn = fn
        self.name = name

    def values(self, points):
        return self.fn(points)


class MajorityRule(Rule):
    """Checks one target bit against the majority of the middle bits.

    With ``invert=False`` the membership is 1 exactly when the target bit
    equals the majority vote of bits ``middle_lo..middle_hi-1``; with
    ``invert=True`` it must equal the minority.
    """

    def __init__(self, target: int, middle_lo: int, middle_hi: int, invert: bool):
        self.target = target
        self.middle_lo = middle_lo
        self.middle_hi = middle_hi
        self.invert = invert

    def values(self, points):
        mid = points[:, self.middle_lo : self.middle_hi].astype(np.int64)
        width = self.middle_hi - self.middle_lo
        majority = (mid.sum(axis=1) * 2 > width).astype(np.uint8)
        if self.invert:
            majority = 1 - majority
        return (points[:, self.target] == majority).astype(np.float64)


class SliceNetworkRule(Rule):
    """Membership computed by a dense network reading a slice of the point."""

    def __init__(self, network: Mlp, lo: int, hi: int):
        self.network = network
        self.lo = lo
        self.hi = hi

    def values(self, points):
        x = points[:, self.lo : self.hi].astype(np.float64)
        return self.network.forward(x)[:, 0]


class ObservationMap:
    """Total map from latent bit-vectors to observation bit-vectors."""

    observation_dim: int

    def observe(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityMap(ObservationMap):
    def __init__(self, dim: int):
        self.observation_dim = dim

    def observe(self, points):
        return np.asarray(points, dtype=np.uint8)


class DecoderMap(ObservationMap):
    """Frozen decoder network; outputs are thresholded at 0.5 into bits.

    ``encoder`` is the optional companion used as the cheap surrogate for
    preimage maxima; ``binarize_surrogate`` controls whether surrogate latent
    activations are thresholded at 0.5.
    """

    def __init__(
        self,
        decoder: Mlp,
        observation_dim: int,
        encoder: Optional[Mlp] = None,
        binarize_surrogate: bool = True,
    ):
        self.decoder = decoder
        self.observation_dim = observation_dim
        self.encoder = encoder
        self.binarize_surrogate = binarize_surrogate

    def observe(self, points):
        soft = self.decoder.forward(np.asarray(points, dtype=np.float64))
        return (soft >= 0.5).astype(np.uint8)

    def encode(self, observations: np.ndarray) -> np.ndarray:
        if self.encoder is None:
            raise ValueError("no surrogate encoder attached")
        soft = self.encoder.forward(np.asarray(observations, dtype=np.float64))
        if self.binarize_surrogate:
            return (soft >= 0.5).astype(np.float64)
        return soft


_CONSTRAINT_RE = re.compile(r"^([xz])(\d+)=([01])$")


@dataclass(frozen=True)
class BitCondition:
    """Conjunction of single-bit constraints on the observation or the latent.

    Each constraint is ``(space, index, value)`` with space ``"x"`` or
    ``"z"``.  An empty conjunction is the always-true condition.
    """

    constraints: tuple = ()

    @classmethod
    def on_x(cls, **bits: int) -> "BitCondition":
        """Convenience constructor: ``BitCondition.on_x(x0=1, x5=0)``."""
        parsed = []
        for name, value in bits.items():
            match = _CONSTRAINT_RE.match(f"{name}={value}")
            if not match:
                raise QueryParseError(f"bad constraint {name}={value}")
            parsed.append((match.group(1), int(match.group(2)), int(match.group(3))))
        return cls(tuple(parsed))

    @classmethod
    def parse(cls, text: str) -> "BitCondition":
        parts = [p.strip() for p in text.split(",")]
        constraints = []
        for part in parts:
            if not part:
                raise QueryParseError("empty constraint")
            match = _CONSTRAINT_RE.match(part.replace(" ", ""))
            if not match:
                raise QueryParseError(f"bad constraint {part!r}")
            constraints.append((match.group(1), int(match.group(2)), int(match.group(3))))
        return cls(tuple(constraints))

    def mask(self, x_table: np.ndarray, z_table: np.ndarray) -> np.ndarray:
        out = np.ones(len(z_table), dtype=bool)
        for space, index, value in self.constraints:
            table = x_table if space == "x" else z_table
            if index >= table.shape[1]:
                raise QueryParseError(f"bit index {space}{index} out of range")
            out &= table[:, index] == value
        return out

    def holds_for(self, x_bits: np.ndarray, z_bits: np.ndarray) -> bool:
        for space, index, value in self.constraints:
            bits = x_bits if space == "x" else z_bits
            if bits[index] != value:
                return False
        return True

    def text(self) -> str:
        return ",".join(f"{s}{i}={v}" for s, i, v in self.constraints)


def parse_query(text: str) -> tuple:
    """Parse ``"C: x0=1,x1=0; Q: x5=1"`` into a (condition, proposition) pair."""
    match = re.match(r"^\s*C\s*:(?P<c>.*);\s*Q\s*:(?P<q>.*)$", text, re.DOTALL)
    if not match:
        raise QueryParseError("query must look like 'C: ...; Q: ...'")
    c_text, q_text = match.group("c").strip(), match.group("q").strip()
    if not c_text or not q_text:
        raise QueryParseError("both condition and proposition need constraints")
    return BitCondition.parse(c_text), BitCondition.parse(q_text)


class NbrModel:
    """A belief-function model: observation map, fuzzy rules, rule weights.

    Immutable after construction.  Per-world suprema and the rule table over
    the latent enumeration are memoized on first use; all fills are
    idempotent, so shared use across threads is safe.
    """

    def __init__(
        self,
        space: LatentSpace,
        observation_map: ObservationMap,
        rules: Sequence[Rule],
        beliefs: Sequence[float],
    ):
        if len(rules) != len(beliefs):
            raise ValueError("rules and beliefs must have equal length")
        if len(rules) > MAX_FUZZY_RULES:
            raise ValueError(f"rule count capped at {MAX_FUZZY_RULES}")
        beliefs = tuple(float(b) for b in beliefs)
        for b in beliefs:
            if not 0.0 <= b <= 1.0:
                raise ValueError("rule weights must lie in [0, 1]")
        self.space = space
        self.observation_map = observation_map
        self.rules = tuple(rules)
        self.beliefs = beliefs
        self._rule_table = None
        self._x_table = None
        self._world_sups = None
        self._preimage = None

    @property
    def rule_count(self) -> int:
        return len(self.rules)

    @property
    def observation_dim(self) -> int:
        return self.observation_map.observation_dim

    # -- cached enumeration tables ------------------------------------------

    def latent_points(self) -> np.ndarray:
        return self.space.points()

    def rule_table(self) -> np.ndarray:
        """Rule memberships over the latent enumeration, shape (K, N)."""
        if self._rule_table is None:
            points = self.latent_points()
            if self.rules:
                table = np.stack([rule(points) for rule in self.rules])
            else:
                table = np.zeros((0, len(points)))
            self._rule_table = table
        return self._rule_table

    def x_table(self) -> np.ndarray:
        """Observations of every latent point, shape (N, observation_dim)."""
        if self._x_table is None:
            self._x_table = self.observation_map.observe(self.latent_points())
        return self._x_table

    def selectors(self):
        k = self.rule_count
        for index in range(1 << k):
            yield tuple(index >> i & 1 for i in range(k))

    def world_membership_table(self, selector) -> np.ndarray:
        """Membership of every latent point in the selected-world fuzzy set."""
        table = self.rule_table()
        chosen = [table[i] for i, y in enumerate(selector) if y]
        if not chosen:
            return np.ones(self.space.size)
        return np.minimum.reduce(chosen)

    def world_membership(self, selector, z_bits) -> float:
        """Pointwise form of the selected-world membership."""
        if len(selector) != self.rule_count:
            raise ValueError("selector length must match rule count")
        point = np.asarray(z_bits, dtype=np.uint8)[None, :]
        value = 1.0
        for i, y in enumerate(selector):
            if y:
                value = min(value, float(self.rules[i](point)[0]))
        return value

    def world_sup(self, selector) -> float:
        """Exact supremum of the selected-world membership over the enumeration."""
        if self._world_sups is None:
            self._world_sups = {}
        key = tuple(selector)
        if key not in self._world_sups:
            self._world_sups[key] = float(self.world_membership_table(key).max())
        return self._world_sups[key]

    # -- belief-function surface --------------------------------------------

    def mass_normalizer(self) -> float:
        """Expected world supremum; the total-mass denominator."""
        total = fsum(
            selector_probability(self.beliefs, y) * self.world_sup(y)
            for y in self.selectors()
        )
        if total <= CONFLICT_TOL:
            raise TotalConflictError("totally conflicting model")
        return total

    def fuzzy_bel(self, membership) -> float:
        """Belief of a fuzzy subset of the latent space.

        ``membership`` is either an array over the enumeration or a callable
        on latent points.  Worlds with zero supremum carry no mass and are
        skipped.
        """
        a = membership(self.latent_points()) if callable(membership) else np.asarray(membership, dtype=np.float64)
        if a.shape != (self.space.size,):
            raise ValueError("membership must cover the latent enumeration")
        if np.any((a < 0.0) | (a > 1.0)):
            raise ValueError("membership values must lie in [0, 1]")
        normalizer = self.mass_normalizer()
        terms = []
        for selector in self.selectors():
            sup = self.world_sup(selector)
            if sup <= 0.0:
                continue
            weight = selector_probability(self.beliefs, selector)
            if weight == 0.0:
                continue
            mu = self.world_membership_table(selector)
            inner = float(np.minimum(mu / sup, 1.0 - a).max())
            terms.append(weight * sup * (1.0 - inner))
        return fsum(terms) / normalizer

    def query(self, condition: BitCondition, proposition: BitCondition) -> QueryResult:
        """Conditional belief and plausibility of two Boolean bit conditions.

        Computed by exact enumeration: for every world, the supremum of the
        world membership over the points satisfying the condition (and the
        proposition or its complement) weighs into the numerators and the
        denominator.  ``bel`` is one minus the against-evidence ratio, so
        ``bel(Q|C) == 1 - pl(notQ|C)`` holds bit-exactly.
        """
        x_table = self.x_table()
        z_table = self.latent_points()
        c_mask = condition.mask(x_table, z_table)
        q_mask = proposition.mask(x_table, z_table)
        cq = c_mask & q_mask
        c_not_q = c_mask & ~q_mask
        den_terms, bel_terms, pl_terms = [], [], []
        for selector in self.selectors():
            weight = selector_probability(self.beliefs, selector)
            mu = self.world_membership_table(selector)
            den_terms.append(weight * _masked_max(mu, c_mask))
            bel_terms.append(weight * _masked_max(mu, c_not_q))
            pl_terms.append(weight * _masked_max(mu, cq))
        denominator = fsum(den_terms)
        if denominator <= CONFLICT_TOL:
            raise ZeroPlausibilityError("condition has zero plausibility")
        return QueryResult(
            bel=1.0 - fsum(bel_terms) / denominator,
            pl=fsum(pl_terms) / denominator,
        )

    def with_condition_rule(self, membership) -> "NbrModel":
        """Model extended with an always-present rule; general conditioning."""
        rule = membership if isinstance(membership, Rule) else TableRule(membership, self.space.dimension)
        return NbrModel(
            space=self.space,
            observation_map=self.observation_map,
            rules=self.rules + (rule,),
            beliefs=self.beliefs + (1.0,),
        )

    # -- sample generation ----------------------------------------------------

    def _preimage_groups(self):
        """Latent indices grouped by observation pattern: (sorted_z, starts, keys)."""
        if self._preimage is None:
            x_indices = bits_to_indices(self.x_table())
            order = np.argsort(x_indices, kind="stable")
            sorted_x = x_indices[order]
            starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
            keys = {int(sorted_x[s]): j for j, s in enumerate(starts)}
            self._preimage = (order, starts, keys)
        return self._preimage

    def keep_probability(self, x_bits) -> float:
        """Expected best membership among latent preimages of one observation."""
        return float(self.keep_probability_batch(np.asarray(x_bits, dtype=np.uint8)[None, :])[0])

    def keep_probability_batch(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized keep probabilities for a batch of observations."""
        xs = np.asarray(xs, dtype=np.uint8)
        if isinstance(self.observation_map, IdentityMap):
            if self.rules:
                values = np.stack([rule(xs) for rule in self.rules])
            else:
                values = np.zeros((0, len(xs)))
            out = np.zeros(len(xs))
            for selector in self.selectors():
                weight = selector_probability(self.beliefs, selector)
                chosen = [values[i] for i, y in enumerate(selector) if y]
                mu = np.minimum.reduce(chosen) if chosen else np.ones(len(xs))
                out += weight * mu
            return out
        order, starts, keys = self._preimage_groups()
        targets = bits_to_indices(xs)
        group_of = np.array([keys.get(int(t), -1) for t in targets])
        out = np.zeros(len(xs))
        table = self.rule_table()
        for selector in self.selectors():
            weight = selector_probability(self.beliefs, selector)
            mu = self.world_membership_table(selector)
            group_max = np.maximum.reduceat(mu[order], starts)
            hit = group_of >= 0
            out[hit] += weight * group_max[group_of[hit]]
        return out


def _masked_max(values: np.ndarray, mask: np.ndarray) -> float:
    """Max over a masked selection; 0 over the empty set."""
    return float(values.max(where=mask, initial=0.0))


class UniformPrior:
    """Uniform prior-knowledge distribution over all bit-vectors."""

    def __init__(self, dim: int):
        self.dim = dim

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.integers(0, 2, size=(size, self.dim), dtype=np.uint8)

    @property
    def mass_table(self) -> np.ndarray:
        if self.dim > MAX_LATENT_DIM:
            raise ValueError("mass table too large to enumerate")
        return np.full(1 << self.dim, 1.0 / (1 << self.dim))


class TablePrior:
    """Prior given by an explicit probability table over all bit-vectors."""

    def __init__(self, probabilities: Sequence[float]):
        probs = np.asarray(probabilities, dtype=np.float64)
        dim = int(np.log2(len(probs)))
        if 1 << dim != len(probs):
            raise ValueError("table length must be a power of two")
        if abs(float(probs.sum()) - 1.0) > 1e-9 or np.any(probs < 0.0):
            raise ValueError("probabilities must be non-negative and sum to 1")
        self.dim = dim
        self._probs = probs

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        indices = rng.choice(len(self._probs), size=size, p=self._probs)
        return (indices[:, None] >> np.arange(self.dim)[None, :] & 1).astype(np.uint8)

    @property
    def mass_table(self) -> np.ndarray:
        return self._probs


def generate_samples(
    model: NbrModel,
    prior,
    count: int,
    seed: int,
    chunk: int = 1 << 16,
    stall_window: int = 1_000_000,
) -> np.ndarray:
    """Draw prior samples and keep each with its keep probability.

    Returns exactly ``count`` accepted observations, deterministically for a
    given seed.  Raises ``SamplingStalledError`` if a full stall window of
    consecutive draws yields an acceptance rate below 1e-6 (in particular,
    no acceptances at all).
    """
    rng = np.random.default_rng(seed)
    accepted = []
    total = 0
    draws_since_accept = 0
    while total < count:
        xs = prior.sample(rng, chunk)
        keep = model.keep_probability_batch(xs)
        u = rng.random(len(xs))
        mask = u < keep
        got = int(mask.sum())
        if got == 0:
            draws_since_accept += len(xs)
            if draws_since_accept >= stall_window:
                raise SamplingStalledError(
                    f"acceptance stalled: nothing kept in {draws_since_accept} draws"
                )
            continue
        draws_since_accept = 0
        accepted.append(xs[mask])
        total += got
    return np.concatenate(accepted)[:count]


def ideal_synthetic_model(b1: float = 0.89, b2: float = 0.67 / 0.89) -> NbrModel:
    """Closed-form two-rule model of the 11-bit world.

    Rule one checks the first bit against the majority of the middle nine;
    rule two checks the last bit against the minority.  The default weights
    put the product ``b1*b2`` at 0.67 exactly.
    """
    space = LatentSpace(11)
    rules = (
        MajorityRule(target=0, middle_lo=1, middle_hi=10, invert=False),
        MajorityRule(target=10, middle_lo=1, middle_hi=10, invert=True),
    )
    return NbrModel(space, IdentityMap(11), rules, (b1, b2))


# The five benchmark queries on the synthetic world and their analytic
# answers under the ideal rules (world enumeration; see tests for the oracle).
BENCHMARK_QUERIES = (
    ("C: x0=1; Q: x10=1", 0.00, 0.33),
    ("C: x0=0; Q: x10=1", 0.67, 1.00),
    ("C: x0=1,x1=0,x2=0,x3=0,x4=0; Q: x5=1", 0.89, 1.00),
    ("C: x0=1,x1=0,x2=0,x3=0,x4=0,x10=1; Q: x5=1", 0.67, 1.00),
    ("C: x0=1,x1=0,x2=0,x3=0,x4=0,x6=1,x7=1,x8=1,x9=1,x10=1; Q: x5=1", 0.67, 0.75),
)
