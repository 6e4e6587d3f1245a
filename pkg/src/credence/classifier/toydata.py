"""Two interleaved noisy arcs with a few points planted on the wrong side.

The relocated points force the training pipeline to fall back on
memorization rules: they sit in the other class's territory where no
nonexpansive linear grade function can reach them, but far enough from the
other arc that a small-radius memorization rule can hold them robustly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ToyDataConfig:
    points_per_class: int = 500
    radius: float = 1.0
    noise: float = 0.08
    relocate_fraction: float = 0.05
    relocate_clearance: float = 0.4
    seed: int = 0


def make_two_arcs(config: ToyDataConfig) -> tuple:
    """Returns (points, labels, relocated mask)."""
    rng = np.random.default_rng(config.seed)
    n = config.points_per_class
    r = config.radius

    t0 = rng.uniform(0.0, np.pi, size=n)
    arc0 = np.stack([r * np.cos(t0), r * np.sin(t0)], axis=1)
    t1 = rng.uniform(0.0, np.pi, size=n)
    arc1 = np.stack([r - r * np.cos(t1), 0.5 * r - r * np.sin(t1)], axis=1)

    points = np.concatenate([arc0, arc1])
    points = points + rng.normal(0.0, config.noise, size=points.shape)
    labels = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])

    relocated = np.zeros(2 * n, dtype=bool)
    k = int(round(config.relocate_fraction * n))
    floor = 0.6 * config.relocate_clearance
    for cls in (0, 1):
        chosen = rng.choice(np.flatnonzero(labels == cls), size=k, replace=False)
        relocated[chosen] = True
        t = rng.uniform(0.2 * np.pi, 0.8 * np.pi, size=k)
        if cls == 0:
            # Below the class-1 arc, clearance away from its points.
            base = np.stack([r - r * np.cos(t), 0.5 * r - r * np.sin(t)], axis=1)
            offset = np.stack([np.zeros(k), -np.full(k, config.relocate_clearance)], axis=1)
        else:
            # Above the class-0 arc.
            base = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
            offset = np.stack([np.zeros(k), np.full(k, config.relocate_clearance)], axis=1)
        moved = base + offset + rng.normal(0.0, config.noise / 2, size=(k, 2))
        # Noise tails of the other class must not crowd the planted points,
        # or no small-radius memorization rule could hold them; push any
        # too-close placement directly away from its nearest enemy.
        enemies = points[(labels != cls) & ~relocated]
        for _ in range(4):
            gaps = moved[:, None, :] - enemies[None, :, :]
            distances = np.linalg.norm(gaps, axis=2)
            nearest = distances.min(axis=1)
            crowded = nearest < floor
            if not np.any(crowded):
                break
            closest = distances.argmin(axis=1)
            away = moved - enemies[closest]
            away /= np.linalg.norm(away, axis=1, keepdims=True)
            moved[crowded] += away[crowded] * (floor + 0.05 - nearest[crowded])[:, None]
        points[chosen] = moved
    return points, labels, relocated
