"""Three-step robust training of the framed-rule classifier, and its attack.

Step one fits the per-class linear nonexpansive grade functions with a
margin-shifted cross entropy (grades reduced by the margin on positives,
the per-class maximum increased by it on negatives), refreshing the subset
assignment as it goes.  Points no grade function claims become memorization
rules.  Step two fits each rule's response scale (and memorization radius)
with the same margin-shifted loss.  Step three learns the rule weights
through the full evidence combination, pitting each point against the
largest grade shift it can currently survive.

Everything that needs gradients runs on the autodiff tape; binary frames
over two classes use a closed product form of the combination that the
tests check against the classical fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import AdamState, adam_step
from .rules import (
    FramedRule,
    adjust_rule_output,
    adversarial_shifts,
    assign_subsets,
    binary_frame,
    classify,
)
from .toydata import ToyDataConfig, make_two_arcs

PL_FLOOR = 1e-30


@dataclass
class AdvConfig:
    """Margins, schedules, and optimizer settings the training pipeline uses."""

    beta: float = 0.1
    omega: float = 0.5
    response_scale: float = 5.0
    gamma: float = 0.5
    subsets_per_class: int = 3
    beta_refresh_period: int = 50
    step1_steps: int = 600
    assign_refresh_period: int = 20
    step2_steps: int = 600
    step3_steps: int = 1200
    step1_lr: float = 0.02
    step2_lr: float = 0.05
    step3_lr: float = 0.05
    batch_size: int = 64
    memorization_radius_init: float = 0.2
    seed: int = 0


class TrainingDivergedError(RuntimeError):
    pass


# -- tape-side classifier ------------------------------------------------------


def _rule_constants(rules: Sequence[FramedRule], xs: np.ndarray, shifts: Optional[np.ndarray]):
    """Per-rule shifted grades and derived constants for the tape combination."""
    grades = np.stack([rule.grade_batch(xs) for rule in rules], axis=1)
    if shifts is not None:
        grades = grades + shifts
    responses = np.stack(
        [
            np.asarray(adjust_rule_output(grades[:, k], rule.scale, rule.positive_ratio))
            for k, rule in enumerate(rules)
        ],
        axis=1,
    )
    sides = (grades >= 0.0).astype(np.float64)  # 1 when the rule backs its own class
    votes_for_one = np.stack(
        [
            sides[:, k] if rule.for_class == 1 else 1.0 - sides[:, k]
            for k, rule in enumerate(rules)
        ],
        axis=1,
    )
    return responses, sides, votes_for_one


def tape_class_outputs(
    rules: Sequence[FramedRule],
    xs: np.ndarray,
    belief_vars: Optional[Sequence[ad.Var]] = None,
    shifts: Optional[np.ndarray] = None,
    x_var: Optional[ad.Var] = None,
) -> ad.Var:
    """Log plausibilities (batch, 2) on the tape for binary two-class frames.

    With ``belief_vars`` the rule weights are differentiable (step three);
    with ``x_var`` the input points are (the attack).  The combination uses
    the closed two-class product form: the plausibility of a class is the
    product of (1 - weight) over the rules currently voting against it,
    renormalized by the total non-conflicting mass.
    """
    if any(rule.frame.num_classes != 2 or rule.frame.block_count != 2 for rule in rules):
        raise ValueError("the tape combination handles binary two-class frames")
    if x_var is None:
        responses_np, sides, votes_one = _rule_constants(rules, xs, shifts)
        response_cols = [ad.Var(responses_np[:, k]) for k in range(len(rules))]
    else:
        response_cols, sides, votes_one = _tape_rule_responses(rules, x_var, shifts)
    log_against = {0: None, 1: None}
    for k, rule in enumerate(rules):
        response = response_cols[k]
        side = sides[:, k]
        span = ad.mul(ad.sub(ad.mul(response, 2.0), 1.0), 2.0 * side - 1.0)  # |2r - 1|
        v_max = ad.add(ad.mul(response, side), ad.mul(ad.sub(1.0, response), 1.0 - side))
        if belief_vars is not None:
            b = belief_vars[k]
        else:
            b = ad.Var(np.float64(rule.belief))
        weight = ad.div(ad.mul(b, span), ad.add(ad.sub(1.0, b), ad.mul(b, v_max)))
        log_one_minus = ad.log(ad.clamp(ad.sub(1.0, weight), PL_FLOOR, None))
        vote1 = votes_one[:, k]
        for cls, vote_mask in ((0, vote1), (1, 1.0 - vote1)):
            term = ad.mul(log_one_minus, vote_mask)
            log_against[cls] = term if log_against[cls] is None else ad.add(log_against[cls], term)
    unnorm0 = ad.exp(log_against[0])  # survives evidence against class 0
    unnorm1 = ad.exp(log_against[1])
    norm = ad.sub(ad.add(unnorm0, unnorm1), ad.mul(unnorm0, unnorm1))
    o0 = ad.log(ad.clamp(ad.div(unnorm0, norm), PL_FLOOR, None))
    o1 = ad.log(ad.clamp(ad.div(unnorm1, norm), PL_FLOOR, None))
    return ad.stack([o0, o1], axis=1)


def _tape_rule_responses(rules, x_var: ad.Var, shifts):
    """Rule responses differentiable in the input points."""
    xs = x_var.value
    response_cols = []
    sides = np.zeros((len(xs), len(rules)))
    for k, rule in enumerate(rules):
        if rule.kind == "linear":
            grade = ad.add(ad.matmul(x_var, rule.weight_vec[:, None]), rule.offset)
            grade = ad.vsum(grade, axis=1)
        else:
            diff = ad.sub(x_var, rule.center)
            dist = ad.sqrt(ad.clamp(ad.vsum(ad.mul(diff, diff), axis=1), 1e-18, None))
            grade = ad.sub(rule.radius, dist)
        if shifts is not None:
            grade = ad.add(grade, shifts[:, k])
        side = (grade.value >= 0.0).astype(np.float64)
        sides[:, k] = side
        sig = ad.sigmoid(ad.mul(grade, rule.scale))
        soft = ad.sub(0.5, ad.mul(ad.sub(0.5, sig), rule.positive_ratio))
        response_cols.append(ad.add(ad.mul(sig, side), ad.mul(soft, 1.0 - side)))
    votes_one = np.stack(
        [sides[:, k] if rule.for_class == 1 else 1.0 - sides[:, k] for k in range(len(rules))],
        axis=1,
    )
    return response_cols, sides, votes_one


def softmax_cross_entropy(outputs: ad.Var, labels: np.ndarray) -> ad.Var:
    """Mean softmax cross entropy of (batch, L) outputs against int labels."""
    hot = np.zeros(outputs.value.shape)
    hot[np.arange(len(labels)), labels] = 1.0
    picked = ad.vsum(ad.mul(outputs, hot), axis=1)
    return ad.vmean(ad.sub(ad.logsumexp(outputs, axis=1), picked))


# -- the three losses ----------------------------------------------------------


def loss_step1(
    weight_var: ad.Var,
    offset_var: ad.Var,
    positives: np.ndarray,
    assignment: np.ndarray,
    negatives: np.ndarray,
    beta: float,
    response_scale: float,
) -> ad.Var:
    """Joint margin-shifted cross entropy for one class's grade functions.

    ``assignment`` holds the owning grade function per positive point (-1
    for leftovers, which do not contribute).  Positives see their own grade
    reduced by the margin; negatives see the best grade increased by it.
    """
    grades_pos = ad.add(ad.matmul(positives, weight_var), offset_var)
    n_fns = weight_var.value.shape[1]
    owner = np.zeros((len(positives), n_fns))
    rows = np.flatnonzero(assignment >= 0)
    owner[rows, assignment[rows]] = 1.0
    pos_terms = ad.mul(
        ad.logsigmoid(ad.mul(ad.sub(grades_pos, beta), response_scale)), owner
    )
    loss = ad.mul(ad.vsum(pos_terms), -1.0)
    if len(negatives):
        grades_neg = ad.add(ad.matmul(negatives, weight_var), offset_var)
        best = ad.vmax(grades_neg, axis=1)
        neg_terms = ad.logsigmoid(ad.mul(ad.add(best, beta), -response_scale))
        loss = ad.sub(loss, ad.vsum(neg_terms))
    return loss


def loss_step2(
    scale_var: ad.Var,
    grade_pos: np.ndarray,
    grade_neg: np.ndarray,
    beta: float,
    radius_var: Optional[ad.Var] = None,
) -> ad.Var:
    """Margin-shifted cross entropy for one rule's response scale.

    For memorization rules the grades are ``radius - distance``: pass the
    distances negated in ``grade_pos``/``grade_neg`` (distance times -1) and
    the radius variable, which then shifts both.
    """
    pos = ad.Var(grade_pos)
    neg = ad.Var(grade_neg)
    if radius_var is not None:
        pos = ad.add(pos, radius_var)
        neg = ad.add(neg, radius_var)
    loss = ad.mul(ad.vsum(ad.logsigmoid(ad.mul(ad.sub(pos, beta), scale_var))), -1.0)
    loss = ad.sub(loss, ad.vsum(ad.logsigmoid(ad.mul(ad.add(neg, beta), ad.mul(scale_var, -1.0)))))
    return loss


def adversarial_shift_matrix(rules, labels: np.ndarray, amounts: np.ndarray) -> np.ndarray:
    """Per-point, per-rule grade shifts pushing toward misclassification."""
    for_classes = np.array([r.for_class for r in rules])
    return np.where(
        for_classes[None, :] == np.asarray(labels)[:, None],
        -np.asarray(amounts)[:, None],
        np.asarray(amounts)[:, None],
    )


def loss_step3(
    rules: Sequence[FramedRule],
    xs: np.ndarray,
    labels: np.ndarray,
    beta_t: np.ndarray,
    omega: float,
    logit_vars: Sequence[ad.Var],
) -> ad.Var:
    """Adversarial plus natural cross entropy; only rule weights learn here."""
    belief_vars = [ad.sigmoid(lv) for lv in logit_vars]
    shifts = adversarial_shift_matrix(rules, labels, beta_t)
    out_adv = tape_class_outputs(rules, xs, belief_vars=belief_vars, shifts=shifts)
    out_ori = tape_class_outputs(rules, xs, belief_vars=belief_vars)
    loss = softmax_cross_entropy(out_adv, labels)
    return ad.add(loss, ad.mul(softmax_cross_entropy(out_ori, labels), omega))


# -- beta_t refresh and the attack ---------------------------------------------


def classifies_strictly(rules, x, label, shift_amount: float) -> bool:
    shifts = adversarial_shifts(rules, label, shift_amount)
    output = classify(rules, x, shifts)
    return output.strictly_correct_for == label


def _strict_margin_batch(rules, xs, labels, amounts) -> np.ndarray:
    """Shifted true-vs-other score margins; positive means still correct."""
    shifts = adversarial_shift_matrix(rules, labels, amounts)
    outputs = tape_class_outputs(rules, xs, shifts=shifts).value
    rows = np.arange(len(labels))
    return outputs[rows, labels] - outputs[rows, 1 - labels]


def refresh_beta_t_batch(
    rules: Sequence[FramedRule],
    xs: np.ndarray,
    labels: np.ndarray,
    beta_hi: float,
    tol: float = 1e-3,
) -> np.ndarray:
    """Vectorized bisection for the largest surviving shift per point."""
    xs = np.asarray(xs, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(xs)
    lo = np.zeros(n)
    hi = np.full(n, beta_hi)
    alive = _strict_margin_batch(rules, xs, labels, lo) > 0.0
    at_cap = alive & (_strict_margin_batch(rules, xs, labels, hi) > 0.0)
    lo[~alive] = 0.0
    hi[~alive] = 0.0
    lo[at_cap] = beta_hi
    hi[at_cap] = beta_hi
    active = alive & ~at_cap
    while np.any(active) and float(np.max(hi[active] - lo[active])) > tol:
        mid = 0.5 * (lo + hi)
        ok = _strict_margin_batch(rules, xs, labels, mid) > 0.0
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)
    return lo


def refresh_beta_t(
    rules: Sequence[FramedRule],
    x: np.ndarray,
    label: int,
    beta_hi: float,
    tol: float = 1e-3,
) -> float:
    """Largest grade shift the point still survives, to within ``tol``.

    Zero when the point is misclassified (or tied) already unshifted;
    ``beta_hi`` when even the largest probe survives.
    """
    if not classifies_strictly(rules, x, label, 0.0):
        return 0.0
    if classifies_strictly(rules, x, label, beta_hi):
        return beta_hi
    lo, hi = 0.0, beta_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if classifies_strictly(rules, x, label, mid):
            lo = mid
        else:
            hi = mid
    return lo


def pgd_attack_l2(
    rules: Sequence[FramedRule],
    x: np.ndarray,
    label: int,
    epsilon: float,
    steps: int = 50,
    step_size: Optional[float] = None,
) -> np.ndarray:
    """Gradient ascent on the true label's loss inside an L2 ball.

    Deterministic: starts at the input, renormalizes the perturbation onto
    the ball after each step, and returns the iterate with the highest loss.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0.0:
        return x.copy()
    batch = pgd_attack_l2_batch(rules, x[None, :], np.array([label]), epsilon, steps, step_size)
    return batch[0]


def pgd_attack_l2_batch(
    rules: Sequence[FramedRule],
    xs: np.ndarray,
    labels: np.ndarray,
    epsilon: float,
    steps: int = 50,
    step_size: Optional[float] = None,
) -> np.ndarray:
    """Batched attack; each row is perturbed independently."""
    xs = np.asarray(xs, dtype=np.float64)
    if epsilon == 0.0:
        return xs.copy()
    if step_size is None:
        step_size = 2.5 * epsilon / steps
    current = xs.copy()
    best = xs.copy()
    best_loss = _pointwise_ce(rules, xs, labels)
    for _ in range(steps):
        x_var = ad.Var(current)
        outputs = tape_class_outputs(rules, current, x_var=x_var)
        hot = np.zeros(outputs.value.shape)
        hot[np.arange(len(labels)), labels] = 1.0
        per_point = ad.sub(ad.logsumexp(outputs, axis=1), ad.vsum(ad.mul(outputs, hot), axis=1))
        ad.backward(ad.vsum(per_point))
        grad = x_var.grad
        norms = np.linalg.norm(grad, axis=1, keepdims=True)
        direction = np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0)
        current = current + step_size * direction
        delta = current - xs
        dn = np.linalg.norm(delta, axis=1, keepdims=True)
        over = dn > epsilon
        scale = np.where(over, epsilon / np.maximum(dn, 1e-30), 1.0)
        current = xs + delta * scale
        losses = _pointwise_ce(rules, current, labels)
        improved = losses > best_loss
        best[improved] = current[improved]
        best_loss = np.maximum(best_loss, losses)
    return best


def _pointwise_ce(rules, xs, labels):
    outputs = tape_class_outputs(rules, xs).value
    shifted = outputs - outputs.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1)) + outputs.max(axis=1)
    return logsum - outputs[np.arange(len(labels)), labels]


# -- the full pipeline -----------------------------------------------------------


@dataclass
class ToyClassifier:
    """A trained rule bank plus everything needed to audit it."""

    rules: list
    train_points: np.ndarray
    train_labels: np.ndarray
    beta_t: np.ndarray
    config: AdvConfig
    diagnostics: dict = field(default_factory=dict)

    def predict(self, xs: np.ndarray) -> np.ndarray:
        outputs = tape_class_outputs(self.rules, np.asarray(xs, dtype=np.float64)).value
        return np.argmax(outputs, axis=1)

    def accuracy(self, xs: np.ndarray, labels: np.ndarray) -> float:
        return float((self.predict(xs) == labels).mean())


def _project_columns_to_unit_norm(weights: np.ndarray) -> None:
    norms = np.linalg.norm(weights, axis=0)
    over = norms > 1.0
    weights[:, over] /= norms[over]


def train_toy_classifier(
    data_config: ToyDataConfig,
    adv: AdvConfig,
    data: Optional[tuple] = None,
) -> ToyClassifier:
    """Run the three training steps on the two-arcs task."""
    if data is None:
        points, labels, _ = make_two_arcs(data_config)
    else:
        points, labels = data
    rng = np.random.default_rng(adv.seed)
    n_fns = adv.subsets_per_class
    class_points = {c: points[labels == c] for c in (0, 1)}

    # Step 1: per-class linear grade functions, subsets refreshed as we go.
    weights = {c: rng.normal(0.0, 0.3, size=(2, n_fns)) for c in (0, 1)}
    offsets = {c: np.zeros(n_fns) for c in (0, 1)}
    for c in (0, 1):
        _project_columns_to_unit_norm(weights[c])
    params = [weights[0], offsets[0], weights[1], offsets[1]]
    adam = AdamState.for_parameters(params)
    assignments = {}
    for step in range(adv.step1_steps):
        if step % adv.assign_refresh_period == 0:
            for c in (0, 1):
                grades = class_points[c] @ weights[c] + offsets[c]
                assignments[c] = assign_subsets(class_points[c], grades, adv.gamma)
        param_vars = [ad.Var(p) for p in params]
        loss = ad.add(
            loss_step1(
                param_vars[0], param_vars[1], class_points[0], assignments[0].indices,
                class_points[1], adv.beta, adv.response_scale,
            ),
            loss_step1(
                param_vars[2], param_vars[3], class_points[1], assignments[1].indices,
                class_points[0], adv.beta, adv.response_scale,
            ),
        )
        if not np.isfinite(loss.item()):
            raise TrainingDivergedError("step 1 loss diverged")
        ad.backward(loss)
        adam_step(params, [pv.grad for pv in param_vars], adam, lr=adv.step1_lr)
        for c in (0, 1):
            _project_columns_to_unit_norm(weights[c])
    for c in (0, 1):
        grades = class_points[c] @ weights[c] + offsets[c]
        assignments[c] = assign_subsets(class_points[c], grades, adv.gamma)

    # Build the rule bank: linear rules for claimed subsets, memorization for
    # the leftovers.  Each rule is paired with its positive training points.
    frame = binary_frame()
    rules = []
    rule_positives = []
    for c in (0, 1):
        class_size = len(class_points[c])
        for i in range(n_fns):
            members = assignments[c].members(i)
            if len(members) == 0:
                continue
            rules.append(
                FramedRule(
                    frame=frame,
                    for_class=c,
                    kind="linear",
                    scale=adv.response_scale,
                    belief=0.5,
                    positive_count=len(members),
                    class_count=class_size,
                    weight_vec=weights[c][:, i].copy(),
                    offset=float(offsets[c][i]),
                )
            )
            rule_positives.append(class_points[c][members])
        for index in assignments[c].leftover():
            rules.append(
                FramedRule(
                    frame=frame,
                    for_class=c,
                    kind="memorization",
                    scale=adv.response_scale,
                    belief=0.5,
                    positive_count=1,
                    class_count=class_size,
                    center=class_points[c][index].copy(),
                    radius=adv.memorization_radius_init,
                )
            )
            rule_positives.append(class_points[c][[index]])

    # Step 2: response scales (and memorization radii), one separable loss.
    _fit_scales(rules, rule_positives, class_points, adv)

    # Step 3: rule weights through the full combination, with per-point
    # adversarial margins refreshed periodically.
    beta_t = _fit_beliefs(rules, points, labels, adv, rng)

    return ToyClassifier(
        rules=rules,
        train_points=points,
        train_labels=labels,
        beta_t=beta_t,
        config=adv,
        diagnostics={
            "leftover_counts": {c: int(len(assignments[c].leftover())) for c in (0, 1)},
            "rule_count": len(rules),
        },
    )


def _fit_scales(rules, rule_positives, class_points, adv: AdvConfig):
    scales = np.full(len(rules), adv.response_scale)
    radii = np.array([r.radius for r in rules])
    params = [scales, radii]
    adam = AdamState.for_parameters(params)
    pos_neg = []
    for rule, positives in zip(rules, rule_positives):
        negatives = class_points[1 - rule.for_class]
        if rule.kind == "linear":
            pos = positives @ rule.weight_vec + rule.offset
            neg = negatives @ rule.weight_vec + rule.offset
            pos_neg.append((pos, neg, False))
        else:
            # Grades are radius plus the negated distance; the radius term is
            # added inside the loss through its own variable.
            pos = -np.linalg.norm(positives - rule.center, axis=1)
            neg = -np.linalg.norm(negatives - rule.center, axis=1)
            pos_neg.append((pos, neg, True))
    for _ in range(adv.step2_steps):
        scale_vars = ad.Var(scales)
        radius_vars = ad.Var(radii)
        total = None
        for k, (pos, neg, is_memo) in enumerate(pos_neg):
            hot = np.zeros(len(rules))
            hot[k] = 1.0
            scale_k = ad.vsum(ad.mul(scale_vars, hot))
            radius_k = ad.vsum(ad.mul(radius_vars, hot)) if is_memo else None
            term = loss_step2(scale_k, pos, neg, adv.beta, radius_var=radius_k)
            total = term if total is None else ad.add(total, term)
        if not np.isfinite(total.item()):
            raise TrainingDivergedError("step 2 loss diverged")
        ad.backward(total)
        adam_step(params, [scale_vars.grad, radius_vars.grad], adam, lr=adv.step2_lr)
        np.clip(scales, 0.1, None, out=scales)
        np.clip(radii, 0.0, None, out=radii)
    for k, rule in enumerate(rules):
        rule.scale = float(scales[k])
        if rule.kind == "memorization":
            rule.radius = float(radii[k])


def _fit_beliefs(rules, points, labels, adv: AdvConfig, rng) -> np.ndarray:
    diameter = float(
        np.sqrt(((points.max(axis=0) - points.min(axis=0)) ** 2).sum())
    )
    logits = np.zeros(len(rules))
    adam = AdamState.for_parameters([logits])
    beta_t = np.zeros(len(points))

    def write_beliefs():
        for k, rule in enumerate(rules):
            rule.belief = float(1.0 / (1.0 + np.exp(-logits[k])))

    for step in range(adv.step3_steps):
        if step % adv.beta_refresh_period == 0:
            write_beliefs()
            beta_t = refresh_beta_t_batch(rules, points, labels, diameter)
        batch = rng.integers(0, len(points), size=adv.batch_size)
        logit_vars = [ad.Var(np.float64(logits[k])) for k in range(len(rules))]
        loss = loss_step3(
            rules, points[batch], labels[batch], beta_t[batch], adv.omega, logit_vars
        )
        if not np.isfinite(loss.item()):
            raise TrainingDivergedError("step 3 loss diverged")
        ad.backward(loss)
        grads = [lv.grad if lv.grad is not None else np.zeros(()) for lv in logit_vars]
        flat = np.array([float(g) for g in grads])
        adam_step([logits], [flat], adam, lr=adv.step3_lr)
    write_beliefs()
    beta_t = refresh_beta_t_batch(rules, points, labels, diameter)
    return beta_t
