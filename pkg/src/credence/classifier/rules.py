"""Framed rules, grade scaling, and evidence combination for classification.

A rule discerns among a few blocks of class labels (its frame) and grades
each block in [0, 1]; labels outside the frame implicitly get grade 1, since
the rule makes no judgment about them.  Scaling tricks renormalize a rule's
grades and weight without changing the belief function it induces (max
scaling exactly, min-max scaling on classical sets), and min-max scaling
turns binary-frame rules into classical two-focal rules, which makes
combining K rules cost O(K * 2**L) through the associative classical kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..dempster import FiniteFrame, MassAssignment, dempster_combine

PL_FLOOR = 1e-30
CLASSICAL_TOL = 1e-9


@dataclass(frozen=True)
class Frame:
    """Disjoint blocks of class labels; uncovered labels are outside."""

    num_classes: int
    blocks: tuple

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        seen = set()
        for block in self.blocks:
            if not block:
                raise ValueError("blocks must be non-empty")
            for label in block:
                if not 0 <= label < self.num_classes:
                    raise ValueError("block label out of range")
                if label in seen:
                    raise ValueError("blocks must be disjoint")
                seen.add(label)
        object.__setattr__(self, "blocks", tuple(tuple(sorted(b)) for b in self.blocks))

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def outside(self) -> tuple:
        covered = {label for block in self.blocks for label in block}
        return tuple(c for c in range(self.num_classes) if c not in covered)


def binary_frame(num_classes: int = 2, positive: int = 0, negative: int = 1) -> Frame:
    return Frame(num_classes, ((positive,), (negative,)))


@dataclass(frozen=True)
class FramedGrades:
    """One grade per frame block; expands to per-class grades."""

    frame: Frame
    values: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) != self.frame.block_count:
            raise ValueError("one grade per block required")
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise ValueError("grades must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    def expanded(self) -> np.ndarray:
        """Per-class grades: block members share the block grade, outside is 1."""
        out = np.ones(self.frame.num_classes)
        for value, block in zip(self.values, self.frame.blocks):
            for label in block:
                out[label] = value
        return out


def scale_max(grades: FramedGrades, weight: float) -> tuple:
    """Divide grades by the per-class maximum and rebalance the weight.

    The induced single-rule belief function is unchanged on every set,
    classical or fuzzy.  The maximum is taken over the expanded per-class
    grades, so frames with outside labels scale by 1 (identity).
    """
    v_max = float(grades.expanded().max())
    if v_max <= 0.0:
        raise ValueError("cannot scale a rule whose grades are all zero")
    scaled = FramedGrades(grades.frame, tuple(v / v_max for v in grades.values))
    new_weight = weight * v_max / (1.0 - weight + weight * v_max)
    return scaled, new_weight


def scale_minmax(grades: FramedGrades, weight: float) -> tuple:
    """Affinely map per-class grades onto [0, 1] and rebalance the weight.

    Preserves the induced belief function on every classical set.  Constant
    grades leave nothing to discern: the rule comes back vacuous (weight 0).
    For a binary frame covering all classes the result is a classical rule.
    """
    expanded = grades.expanded()
    v_max = float(expanded.max())
    v_min = float(expanded.min())
    if v_max == v_min:
        return grades, 0.0
    span = v_max - v_min
    scaled = FramedGrades(grades.frame, tuple((v - v_min) / span for v in grades.values))
    new_weight = weight * span / (1.0 - weight + weight * v_max)
    return scaled, new_weight


@dataclass(frozen=True)
class ClassicalRule:
    """A two-focal rule: its focal class set with some weight, else the frame."""

    focal: int
    weight: float


def to_classical(grades: FramedGrades, weight: float) -> ClassicalRule:
    """Read a min-max-scaled rule as a classical rule; rejects fuzzy grades."""
    expanded = grades.expanded()
    if np.any((expanded > CLASSICAL_TOL) & (expanded < 1.0 - CLASSICAL_TOL)):
        raise ValueError("grades are not classical; apply scale_minmax to a binary frame")
    focal = int(sum(1 << c for c, v in enumerate(expanded) if v >= 0.5))
    if focal == 0:
        raise ValueError("classical rule must keep some class plausible")
    return ClassicalRule(focal=focal, weight=float(weight))


def combine_rules(rules: Sequence[ClassicalRule], num_classes: int) -> MassAssignment:
    """Left fold of the classical combination over two-focal rules."""
    frame = FiniteFrame(tuple(range(num_classes)))
    combined = MassAssignment.vacuous(frame)
    for rule in rules:
        if not 0.0 <= rule.weight <= 1.0:
            raise ValueError("rule weight outside [0, 1]")
        if rule.weight == 0.0:
            continue
        masses = {rule.focal: rule.weight}
        if rule.weight < 1.0:
            masses[frame.full_mask] = masses.get(frame.full_mask, 0.0) + 1.0 - rule.weight
        combined = dempster_combine(combined, MassAssignment(frame, masses))
    return combined


def class_plausibilities(mass: MassAssignment, num_classes: int) -> np.ndarray:
    return np.array([mass.pl(1 << c) for c in range(num_classes)])


@dataclass(frozen=True)
class ClassOutput:
    """Per-class log plausibilities; the arg-max is the predicted label."""

    scores: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.scores))

    @property
    def strictly_correct_for(self) -> Optional[int]:
        best = self.label
        runner_up = np.max(np.delete(self.scores, best)) if len(self.scores) > 1 else -np.inf
        return best if self.scores[best] > runner_up else None


def adjust_rule_output(grade, scale: float, positive_ratio: float):
    """Sigmoid response, softened on the negative side by the coverage ratio.

    A rule trained on a fraction of its class learns only that a negative
    response means dissimilarity to that fraction, so the response is pulled
    toward indifference in proportion to the fraction.  Both branches meet
    at 0.5 when the grade is zero.
    """
    grade = np.asarray(grade, dtype=np.float64)
    scalar_input = grade.ndim == 0
    grade = np.atleast_1d(grade)
    z = scale * grade
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    soft = 0.5 - positive_ratio * (0.5 - sig)
    out = np.where(grade >= 0.0, sig, soft)
    return float(out[0]) if scalar_input else out


@dataclass
class FramedRule:
    """A trainable binary-frame rule: linear and nonexpansive, or memorizing.

    Linear rules grade with a norm-capped inner product; memorization rules
    grade with ``radius - ||x - center||``, which is nonexpansive by
    construction.  ``positive_count / class_count`` is the trained coverage
    used by the output adjustment.
    """

    frame: Frame
    for_class: int
    kind: str  # "linear" | "memorization"
    scale: float
    belief: float
    positive_count: int
    class_count: int
    weight_vec: Optional[np.ndarray] = None
    offset: float = 0.0
    center: Optional[np.ndarray] = None
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "memorization"):
            raise ValueError("kind must be linear or memorization")
        if self.kind == "linear":
            if self.weight_vec is None:
                raise ValueError("linear rule needs a weight vector")
            if float(np.linalg.norm(self.weight_vec)) > 1.0 + 1e-9:
                raise ValueError("linear rule weight norm must be at most 1")
        elif self.center is None:
            raise ValueError("memorization rule needs a center")

    @property
    def positive_ratio(self) -> float:
        return self.positive_count / self.class_count

    def grade(self, x: np.ndarray) -> float:
        return float(self.grade_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def grade_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if self.kind == "linear":
            return xs @ self.weight_vec + self.offset
        return self.radius - np.linalg.norm(xs - self.center, axis=1)

    def grades_at(self, x: np.ndarray, shift: float = 0.0) -> FramedGrades:
        """Block grades at a point, with an optional adversarial grade shift."""
        response = adjust_rule_output(self.grade(x) + shift, self.scale, self.positive_ratio)
        values = []
        for block in self.frame.blocks:
            values.append(response if self.for_class in block else 1.0 - response)
        return FramedGrades(self.frame, tuple(values))

    def classical_at(self, x: np.ndarray, shift: float = 0.0) -> ClassicalRule:
        grades = self.grades_at(x, shift)
        scaled, weight = scale_minmax(grades, self.belief)
        if weight == 0.0:
            return ClassicalRule(focal=(1 << self.frame.num_classes) - 1, weight=0.0)
        return to_classical(scaled, weight)


def classify(
    rules: Sequence[FramedRule],
    x: np.ndarray,
    shifts: Optional[Sequence[float]] = None,
    num_classes: Optional[int] = None,
) -> ClassOutput:
    """Log plausibility of every class after combining all rules at a point."""
    if not rules:
        if num_classes is None:
            raise ValueError("an empty bank needs an explicit class count")
        return ClassOutput(scores=np.zeros(num_classes))
    num_classes = rules[0].frame.num_classes
    if shifts is None:
        shifts = [0.0] * len(rules)
    classicals = [rule.classical_at(x, shift) for rule, shift in zip(rules, shifts)]
    mass = combine_rules(classicals, num_classes)
    pl = np.maximum(class_plausibilities(mass, num_classes), PL_FLOOR)
    return ClassOutput(scores=np.log(pl))


def adversarial_shifts(rules: Sequence[FramedRule], label: int, amount: float) -> list:
    """Grade shifts pushing every rule toward misclassifying ``label``."""
    return [-amount if rule.for_class == label else amount for rule in rules]


@dataclass(frozen=True)
class SubsetAssignment:
    """Partition of one class's points among that class's grade functions.

    ``indices[i]`` is the owning grade function of point ``i``, or -1 for
    the leftover subset (no grade reached the threshold).
    """

    indices: np.ndarray
    threshold: float
    subset_count: int

    def members(self, subset: int) -> np.ndarray:
        return np.flatnonzero(self.indices == subset)

    def leftover(self) -> np.ndarray:
        return np.flatnonzero(self.indices == -1)


def assign_subsets(points: np.ndarray, grade_values: np.ndarray, gamma: float) -> SubsetAssignment:
    """Send each point to its best-grading function, or to the leftovers.

    ``grade_values`` has one column per grade function; ties take the lowest
    column index.  A point whose best grade is below ``gamma`` lands in the
    leftover subset.
    """
    grade_values = np.asarray(grade_values, dtype=np.float64)
    if len(points) != len(grade_values):
        raise ValueError("one grade row per point required")
    best = np.argmax(grade_values, axis=1)
    best_value = grade_values[np.arange(len(grade_values)), best]
    indices = np.where(best_value >= gamma, best, -1)
    return SubsetAssignment(indices=indices, threshold=gamma, subset_count=grade_values.shape[1])
