"""Evidence-combining robust classifier: rules, training, attack, statistics."""

from .mnist import (
    OracleRobustnessStats,
    load_mnist_training_matrix,
    nearest_other_label_distances,
    oracle_robustness_stats,
    read_idx_images,
    read_idx_labels,
    write_idx_images,
    write_idx_labels,
)
from .robust import (
    AdvConfig,
    ToyClassifier,
    adversarial_shift_matrix,
    loss_step1,
    loss_step2,
    loss_step3,
    pgd_attack_l2,
    pgd_attack_l2_batch,
    refresh_beta_t,
    refresh_beta_t_batch,
    softmax_cross_entropy,
    tape_class_outputs,
    train_toy_classifier,
)
from .rules import (
    ClassicalRule,
    ClassOutput,
    Frame,
    FramedGrades,
    FramedRule,
    SubsetAssignment,
    adjust_rule_output,
    adversarial_shifts,
    assign_subsets,
    binary_frame,
    class_plausibilities,
    classify,
    combine_rules,
    scale_max,
    scale_minmax,
    to_classical,
)
from .toydata import ToyDataConfig, make_two_arcs

__all__ = [
    "AdvConfig",
    "ClassOutput",
    "ClassicalRule",
    "Frame",
    "FramedGrades",
    "FramedRule",
    "OracleRobustnessStats",
    "SubsetAssignment",
    "ToyClassifier",
    "ToyDataConfig",
    "adjust_rule_output",
    "adversarial_shift_matrix",
    "adversarial_shifts",
    "assign_subsets",
    "binary_frame",
    "class_plausibilities",
    "classify",
    "combine_rules",
    "load_mnist_training_matrix",
    "loss_step1",
    "loss_step2",
    "loss_step3",
    "make_two_arcs",
    "nearest_other_label_distances",
    "oracle_robustness_stats",
    "pgd_attack_l2",
    "pgd_attack_l2_batch",
    "read_idx_images",
    "read_idx_labels",
    "refresh_beta_t",
    "refresh_beta_t_batch",
    "scale_max",
    "scale_minmax",
    "softmax_cross_entropy",
    "tape_class_outputs",
    "to_classical",
    "train_toy_classifier",
    "write_idx_images",
    "write_idx_labels",
]
