"""Equivalence and accuracy metrics with an indifference tolerance.

Two scoring surfaces: grounding equivalence (same aggregator, true vs
learned grounding) and value-system prediction (true weights+grounding vs
learned weights+grounding). Both label sampled trajectory pairs with a
ternary preference at tolerance epsilon and count matching labels; a pair
with exactly one indifferent side counts as incorrect.

Evaluation pairs are sampled from the same p-greedy policies used to
build the training pools, but from a disjoint seed stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .grounding import RewardModel
from .mvdp import (
    FeatureMap,
    Mvdp,
    Trajectory,
    ValueSystemWeights,
    grounding_of_trajectory,
)
from .seeding import derive_seed
from .solver import Policy, p_greedy_policy, sample_trajectories, soft_value_iteration


class Preference(Enum):
    LEFT = "left"
    RIGHT = "right"
    INDIFFERENT = "indifferent"


def ternary_preference(a: float, b: float, epsilon: float) -> Preference:
    """Indifferent within the closed band |a - b| <= epsilon, else the larger wins."""
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("alignments must be finite")
    if abs(a - b) <= epsilon:
        return Preference.INDIFFERENT
    return Preference.LEFT if a > b else Preference.RIGHT


@dataclass(frozen=True)
class AccuracyReport:
    accuracy: float
    n_pairs: int
    n_within_epsilon: int
    epsilon: float

    def __post_init__(self):
        if self.n_within_epsilon > self.n_pairs:
            raise ValueError("indifferent count cannot exceed pair count")


class Grounding:
    """Anything that maps a trajectory to its m per-value alignments."""

    m: int

    def alignments(self, traj: Trajectory) -> np.ndarray:
        raise NotImplementedError


class TableGrounding(Grounding):
    """Ground-truth alignments straight from a process's reward tables."""

    def __init__(self, mvdp: Mvdp):
        self.mvdp = mvdp
        self.m = mvdp.m

    def alignments(self, traj: Trajectory) -> np.ndarray:
        return grounding_of_trajectory(self.mvdp, traj)


class ModelGrounding(Grounding):
    """Alignments from one trained reward model per value."""

    def __init__(self, models: Sequence[RewardModel], features: FeatureMap):
        self.models = list(models)
        self.features = features
        self.m = len(self.models)

    def alignments(self, traj: Trajectory) -> np.ndarray:
        out = np.empty(self.m)
        for i, model in enumerate(self.models):
            if model.kind in ("linear", "linear_softmax"):
                val, _ = model.forward_batch(traj.feature_sum[None, :])
                out[i] = val[0]
            else:
                rewards, _ = model.forward_batch(
                    np.stack([self.features(s, a) for s, a in traj.steps])
                )
                out[i] = rewards.sum()
        return out


def sample_eval_pairs(
    mvdp: Mvdp, pair_count: int, seed: int, greedy_p: float = 0.8
) -> list[tuple[Trajectory, Trajectory]]:
    """Trajectory pairs drawn from a balanced mix of per-value p-greedy policies."""
    per_value = [
        p_greedy_policy(
            soft_value_iteration(mvdp, mvdp.rewards[i], mvdp.horizon), greedy_p
        )
        for i in range(mvdp.m)
    ]
    trajs: list[Trajectory] = []
    need = 2 * pair_count
    base = need // mvdp.m
    counts = [base + (1 if i < need - base * mvdp.m else 0) for i in range(mvdp.m)]
    for i, policy in enumerate(per_value):
        if counts[i] == 0:
            continue
        trajs.extend(
            sample_trajectories(
                mvdp,
                policy,
                counts[i],
                mvdp.horizon,
                derive_seed(seed, "eval-pool", i),
                stop_states=mvdp.terminal_states,
            )
        )
    return [(trajs[2 * k], trajs[2 * k + 1]) for k in range(pair_count)]


def _label_accuracy(
    score_true, score_hat, pairs, epsilon: float
) -> AccuracyReport:
    correct = 0
    indifferent_true = 0
    for left, right in pairs:
        truth = ternary_preference(score_true(left), score_true(right), epsilon)
        guess = ternary_preference(score_hat(left), score_hat(right), epsilon)
        if truth is Preference.INDIFFERENT:
            indifferent_true += 1
        if truth is guess:
            correct += 1
    return AccuracyReport(
        accuracy=correct / len(pairs),
        n_pairs=len(pairs),
        n_within_epsilon=indifferent_true,
        epsilon=epsilon,
    )


def grounding_equivalence_accuracy(
    mvdp_true: Mvdp,
    grounding_hat: Grounding,
    aggregator_weights: ValueSystemWeights,
    pair_count: int = 1000,
    epsilon: float = 0.04,
    seed: int = 0,
    pairs: Sequence[tuple[Trajectory, Trajectory]] | None = None,
) -> AccuracyReport:
    """Label agreement of one aggregator over true vs learned groundings."""
    truth = TableGrounding(mvdp_true)
    if truth.m != grounding_hat.m:
        raise ValueError("groundings have different value counts")
    if pairs is None:
        pairs = sample_eval_pairs(mvdp_true, pair_count, seed)
    w = aggregator_weights.w
    return _label_accuracy(
        lambda t: float(w @ truth.alignments(t)),
        lambda t: float(w @ grounding_hat.alignments(t)),
        pairs,
        epsilon,
    )


def preference_prediction_accuracy(
    mvdp_true: Mvdp,
    true_vs: tuple[ValueSystemWeights, Grounding],
    learned_vs: tuple[ValueSystemWeights, Grounding],
    pair_count: int = 1000,
    epsilon: float = 0.04,
    seed: int = 0,
    pairs: Sequence[tuple[Trajectory, Trajectory]] | None = None,
) -> AccuracyReport:
    """Label agreement between two complete value system functions."""
    (w_true, g_true), (w_hat, g_hat) = true_vs, learned_vs
    if pairs is None:
        pairs = sample_eval_pairs(mvdp_true, pair_count, seed)
    return _label_accuracy(
        lambda t: float(w_true.w @ g_true.alignments(t)),
        lambda t: float(w_hat.w @ g_hat.alignments(t)),
        pairs,
        epsilon,
    )


def average_alignments(
    mvdp_true: Mvdp,
    policy: Policy,
    n_samples: int = 1000,
    horizon: int | None = None,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Ground-truth per-value alignment mean and sample std under a policy."""
    horizon = mvdp_true.horizon if horizon is None else horizon
    trajs = sample_trajectories(
        mvdp_true,
        policy,
        n_samples,
        horizon,
        seed,
        stop_states=mvdp_true.terminal_states,
    )
    table = np.stack([grounding_of_trajectory(mvdp_true, t) for t in trajs])
    means = table.mean(axis=0)
    stds = table.std(axis=0, ddof=1) if n_samples > 1 else np.zeros(mvdp_true.m)
    return [(float(m), float(s)) for m, s in zip(means, stds)]


def reward_scatter_export(
    mvdp_true: Mvdp, models: Sequence[RewardModel], path
) -> None:
    """CSV of true vs learned reward for every (value, state, action)."""
    if len(models) != mvdp_true.m:
        raise ValueError(f"need {mvdp_true.m} models")
    feats = np.stack(
        [
            np.stack([mvdp_true.features(s, a) for a in range(mvdp_true.n_actions)])
            for s in range(mvdp_true.n_states)
        ]
    ).reshape(-1, mvdp_true.features.dim)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "state", "action", "true_reward", "learned_reward"])
        for i, model in enumerate(models):
            learned, _ = model.forward_batch(feats)
            learned = learned.reshape(mvdp_true.n_states, mvdp_true.n_actions)
            label = mvdp_true.values.labels[i]
            for s in range(mvdp_true.n_states):
                for a in range(mvdp_true.n_actions):
                    writer.writerow(
                        [
                            label,
                            s,
                            a,
                            repr(float(mvdp_true.rewards[i, s, a])),
                            repr(float(learned[s, a])),
                        ]
                    )
