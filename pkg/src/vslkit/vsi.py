"""Value system identification: recovering simplex weights from behaviour.

Maximum-entropy IRL restricted to linear scalarizations of the per-value
reward tables. Each iteration scalarizes the tables with the current
weights, plans the soft policy, computes its expected visitation counts
and steps the weights against the visitation mismatch. Weights live on
the simplex through a softmax over unconstrained logits, initialized at
the uniform point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .grounding import RewardModel
from .mvdp import Mvdp, Trajectory, ValueSystemWeights
from .solver import (
    Policy,
    VisitationMatrix,
    soft_value_iteration,
    visitation_from_policy,
    visitation_from_trajectories,
)

VSI_FORMAT_VERSION = 1


@dataclass(frozen=True)
class VsiConfig:
    horizon: int = 50
    learning_rate: float = 0.2
    steps: int = 200
    seed: int = 0
    weight_mode: str = "softmax_logits"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_mode != "softmax_logits":
            raise ValueError(f"unsupported weight mode {self.weight_mode!r}")


@dataclass(frozen=True)
class VsiResult:
    weights: ValueSystemWeights
    tvc_trace: np.ndarray
    final_policy: Policy
    final_tvc: float


def tvc(mu_hat: VisitationMatrix, mu: VisitationMatrix) -> float:
    """Mean absolute visitation-count difference per (state, action) cell."""
    if mu_hat.mu.shape != mu.mu.shape:
        raise ValueError(
            f"shape mismatch: {mu_hat.mu.shape} vs {mu.mu.shape}"
        )
    return float(np.abs(mu_hat.mu - mu.mu).mean())


def materialize_reward_tables(
    mvdp: Mvdp, reward_source
) -> np.ndarray:
    """Per-value reward tables (m, S, A) from tables or trained models."""
    if isinstance(reward_source, np.ndarray):
        tables = np.asarray(reward_source, dtype=float)
        if tables.shape != (mvdp.m, mvdp.n_states, mvdp.n_actions):
            raise ValueError(f"reward tables have shape {tables.shape}")
        return tables
    models: Sequence[RewardModel] = list(reward_source)
    if len(models) != mvdp.m:
        raise ValueError(f"need {mvdp.m} reward models, got {len(models)}")
    feats = np.stack(
        [
            np.stack([mvdp.features(s, a) for a in range(mvdp.n_actions)])
            for s in range(mvdp.n_states)
        ]
    ).reshape(mvdp.n_states * mvdp.n_actions, -1)
    tables = np.empty((mvdp.m, mvdp.n_states, mvdp.n_actions))
    for i, model in enumerate(models):
        out, _ = model.forward_batch(feats)
        tables[i] = out.reshape(mvdp.n_states, mvdp.n_actions)
    return tables


def train_vsi(
    mvdp: Mvdp,
    reward_source,
    target_mu: VisitationMatrix,
    config: VsiConfig,
) -> VsiResult:
    """Fit simplex weights whose soft policy matches the target visitations.

    The trace logs the visitation error of the weights in effect at the
    start of each iteration; the returned weights, policy and final error
    come from one extra evaluation after the last update.
    """
    tables = materialize_reward_tables(mvdp, reward_source)
    if not np.isfinite(tables).all():
        raise ValueError("reward tables contain non-finite entries")
    m = mvdp.m
    mu = target_mu.mu
    logits = np.zeros(m)
    trace = np.empty(config.steps)

    def evaluate(w: np.ndarray):
        scalar = np.tensordot(w, tables, axes=1)
        policy = soft_value_iteration(mvdp, scalar, config.horizon)
        mu_hat = visitation_from_policy(mvdp, policy, config.horizon).mu
        return policy, mu_hat

    for step in range(config.steps):
        w = softmax(logits)
        policy, mu_hat = evaluate(w)
        trace[step] = np.abs(mu_hat - mu).mean()
        gap = mu_hat - mu
        grad_w = np.tensordot(tables, gap, axes=([1, 2], [0, 1]))
        grad_logits = w * (grad_w - float(w @ grad_w))
        if not np.isfinite(grad_logits).all():
            raise ValueError(f"non-finite weight gradient at iteration {step}")
        logits = logits - config.learning_rate * grad_logits

    w = softmax(logits)
    policy, mu_hat = evaluate(w)
    return VsiResult(
        weights=ValueSystemWeights(w / w.sum()),
        tvc_trace=trace,
        final_policy=policy,
        final_tvc=float(np.abs(mu_hat - mu).mean()),
    )


def identify_from_trajectories(
    mvdp: Mvdp,
    reward_source,
    demos: Sequence[Trajectory],
    config: VsiConfig,
) -> VsiResult:
    """Identification against the empirical visitations of demonstrations."""
    if len(demos) == 0:
        raise ValueError("need at least one demonstration trajectory")
    mu = visitation_from_trajectories(demos, mvdp.n_states, mvdp.n_actions)
    return train_vsi(mvdp, reward_source, mu, config)


def result_to_dict(result: VsiResult, config: VsiConfig) -> dict:
    return {
        "version": VSI_FORMAT_VERSION,
        "weights": result.weights.w.tolist(),
        "tvc_trace": result.tvc_trace.tolist(),
        "final_tvc": result.final_tvc,
        "config": {
            "horizon": config.horizon,
            "learning_rate": config.learning_rate,
            "steps": config.steps,
            "seed": config.seed,
            "weight_mode": config.weight_mode,
        },
    }


def save_result(result: VsiResult, config: VsiConfig, path) -> None:
    Path(path).write_text(json.dumps(result_to_dict(result, config)), encoding="utf-8")


def save_tvc_trace(trace: np.ndarray, path) -> None:
    lines = ["iteration,tvc"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(np.asarray(trace, dtype=float))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
