"""Reward-model fitting from quantified pairwise comparisons.

Three model families share one flat-parameter interface:

* ``linear_softmax`` - dot product with softmax-normalized weights, so the
  effective feature weights are non-negative and sum to 1;
* ``mlp`` - fully-connected net with tanh hidden layers and a bias-free
  tanh output unit, keeping rewards in [-1, 1];
* ``linear`` - plain unconstrained dot product.

Training is mini-batch gradient descent on the cross-entropy between the
dataset's comparison quantities and the model's logistic preference
probabilities. Gradients are analytic and exact for the implemented loss
(including its log clamp), which finite-difference tests rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, softmax

from .mvdp import FeatureMap, Trajectory
from .preferences import PreferenceDataset, PreferenceRecord, check_chain_connectivity
from .seeding import generator

MODEL_FORMAT_VERSION = 1
LOG_CLAMP = 1e-12

KINDS = ("linear_softmax", "mlp", "linear")
DEFAULT_HIDDEN = (50, 100, 50)


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class RewardModel:
    """Parameterized map from feature vectors to scalar rewards."""

    kind: str
    input_dim: int
    params: np.ndarray
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.params = np.asarray(self.params, dtype=float).ravel()
        expected = self.n_params(self.kind, self.input_dim, self.hidden)
        if self.params.size != expected:
            raise ValueError(
                f"{self.kind} with input_dim={self.input_dim} needs {expected} "
                f"parameters, got {self.params.size}"
            )
        if not np.isfinite(self.params).all():
            raise ValueError("parameters must be finite")

    @staticmethod
    def n_params(kind: str, input_dim: int, hidden: tuple[int, ...]) -> int:
        if kind in ("linear_softmax", "linear"):
            return input_dim
        total, prev = 0, input_dim
        for h in hidden:
            total += prev * h + h
            prev = h
        return total + prev  # bias-free output unit

    @classmethod
    def create(
        cls,
        kind: str,
        input_dim: int,
        seed: int = 0,
        hidden: tuple[int, ...] | None = None,
    ) -> "RewardModel":
        """Fresh model with parameters uniform in [-0.1, 0.1]."""
        hidden = tuple(hidden) if hidden is not None else (
            DEFAULT_HIDDEN if kind == "mlp" else ()
        )
        if kind != "mlp":
            hidden = ()
        n = cls.n_params(kind, input_dim, hidden)
        params = generator(seed, "init", kind).uniform(-0.1, 0.1, size=n)
        return cls(kind, input_dim, params, hidden)

    def effective_weights(self) -> np.ndarray:
        """Simplex weights of a linear_softmax model."""
        if self.kind != "linear_softmax":
            raise ValueError("effective weights are defined for linear_softmax only")
        return softmax(self.params)

    def _layers(self):
        shapes = []
        prev = self.input_dim
        for h in self.hidden:
            shapes.append((prev, h))
            prev = h
        pos = 0
        mats, biases = [], []
        for a, b in shapes:
            mats.append(self.params[pos : pos + a * b].reshape(a, b))
            pos += a * b
            biases.append(self.params[pos : pos + b])
            pos += b
        w_out = self.params[pos:]
        return mats, biases, w_out

    def forward_batch(self, x: np.ndarray):
        """Rewards for a (n, p) feature matrix; returns (out, cache)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"features must be (n, {self.input_dim})")
        if self.kind == "linear":
            return x @ self.params, (x,)
        if self.kind == "linear_softmax":
            w = softmax(self.params)
            return x @ w, (x, w)
        mats, biases, w_out = self._layers()
        acts = [x]
        for w, b in zip(mats, biases):
            acts.append(np.tanh(acts[-1] @ w + b))
        out = np.tanh(acts[-1] @ w_out)
        return out, (acts, out, mats, w_out)

    def backward_batch(self, cache, out_grad: np.ndarray) -> np.ndarray:
        """Flat parameter gradient of sum_i out_grad[i] * reward_i."""
        g = np.asarray(out_grad, dtype=float)
        if self.kind == "linear":
            (x,) = cache
            return x.T @ g
        if self.kind == "linear_softmax":
            x, w = cache
            dw = x.T @ g
            return w * (dw - float(w @ dw))
        acts, out, mats, w_out = cache
        delta = g * (1.0 - out**2)
        grads_w, grads_b = [], []
        d_w_out = acts[-1].T @ delta
        upstream = np.outer(delta, w_out)
        for i in range(len(mats) - 1, -1, -1):
            dz = upstream * (1.0 - acts[i + 1] ** 2)
            grads_w.append(acts[i].T @ dz)
            grads_b.append(dz.sum(axis=0))
            upstream = dz @ mats[i].T
        flat = []
        for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
            flat.append(gw.ravel())
            flat.append(gb)
        flat.append(d_w_out)
        return np.concatenate(flat)

    def with_params(self, params: np.ndarray) -> "RewardModel":
        return RewardModel(self.kind, self.input_dim, params, self.hidden)


def model_forward(model: RewardModel, features: np.ndarray) -> float:
    """Reward of a single feature vector."""
    out, _ = model.forward_batch(np.asarray(features, dtype=float)[None, :])
    return float(out[0])


def _step_features(traj: Trajectory, features: FeatureMap) -> np.ndarray:
    return np.stack([features(s, a) for s, a in traj.steps])


def model_trajectory_reward(
    model: RewardModel, traj: Trajectory, features: FeatureMap | None = None
) -> float:
    """Sum of per-step rewards. Linear kinds use the cached feature sum."""
    if model.kind in ("linear", "linear_softmax"):
        return model_forward(model, traj.feature_sum)
    if features is None:
        raise ValueError("an mlp model needs the feature map for per-step rewards")
    out, _ = model.forward_batch(_step_features(traj, features))
    return float(out.sum())


def bt_probability(
    model: RewardModel,
    left: Trajectory,
    right: Trajectory,
    features: FeatureMap | None = None,
) -> float:
    """Probability that `left` is preferred, from the reward difference."""
    d = model_trajectory_reward(model, left, features) - model_trajectory_reward(
        model, right, features
    )
    return float(expit(d))


def _record_arrays(batch: Sequence[PreferenceRecord]):
    y = np.array([rec.y for rec in batch], dtype=float)
    return y


def _loss_terms(diffs: np.ndarray, y: np.ndarray):
    """Per-record loss and d(loss)/d(diff), honoring the log clamp."""
    p = expit(diffs)
    q = 1.0 - p
    logp = np.log(np.maximum(p, LOG_CLAMP))
    logq = np.log(np.maximum(q, LOG_CLAMP))
    losses = -(y * logp + (1.0 - y) * logq)
    dldd = (1.0 - y) * p * (q > LOG_CLAMP) - y * q * (p > LOG_CLAMP)
    return losses, dldd


def _batch_diffs(model, batch, features):
    return np.array(
        [
            model_trajectory_reward(model, rec.left, features)
            - model_trajectory_reward(model, rec.right, features)
            for rec in batch
        ]
    )


def grounding_loss(
    model: RewardModel,
    batch: Sequence[PreferenceRecord],
    features: FeatureMap | None = None,
) -> float:
    """Mean cross-entropy between comparison quantities and model preferences."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    losses, _ = _loss_terms(_batch_diffs(model, batch, features), _record_arrays(batch))
    return float(losses.mean())


def loss_gradient(
    model: RewardModel,
    batch: Sequence[PreferenceRecord],
    features: FeatureMap | None = None,
) -> np.ndarray:
    """Exact gradient of grounding_loss with respect to the flat parameters."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    y = _record_arrays(batch)
    if model.kind in ("linear", "linear_softmax"):
        phi = np.stack([rec.left.feature_sum - rec.right.feature_sum for rec in batch])
        out, cache = model.forward_batch(phi)
        _, dldd = _loss_terms(out, y)
        return model.backward_batch(cache, dldd / len(batch))
    if features is None:
        raise ValueError("an mlp model needs the feature map")
    rows = []
    signs = []
    bounds = [0]
    for rec in batch:
        rows.append(_step_features(rec.left, features))
        signs.append(np.ones(len(rec.left)))
        rows.append(_step_features(rec.right, features))
        signs.append(-np.ones(len(rec.right)))
        bounds.append(bounds[-1] + len(rec.left) + len(rec.right))
    x = np.concatenate(rows)
    sign = np.concatenate(signs)
    out, cache = model.forward_batch(x)
    diffs = np.add.reduceat(out * sign, bounds[:-1])
    _, dldd = _loss_terms(diffs, y)
    step_coef = np.repeat(dldd / len(batch), np.diff(bounds)) * sign
    return model.backward_batch(cache, step_coef)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.01
    steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class _CompiledPool:
    """Pool trajectories compiled to index form for fast batched training.

    Rewards of a trajectory are sums over its distinct (state, action)
    pairs weighted by occurrence counts, so one forward/backward pass over
    the distinct pairs in a batch covers every record.
    """

    def __init__(self, dataset: PreferenceDataset):
        self.x_all = None
        self.traj_rows: list[np.ndarray] = []
        if dataset.features is not None:
            pairs: dict[tuple[int, int], int] = {}
            for traj in dataset.pool:
                idx = np.empty(len(traj), dtype=np.int64)
                for k, step in enumerate(traj.steps):
                    key = pairs.setdefault(step, len(pairs))
                    idx[k] = key
                self.traj_rows.append(idx)
            fmap = dataset.features
            self.x_all = np.stack([fmap(s, a) for (s, a) in pairs])
        self.left = np.array(
            [dataset.index_of(r.left) for r in dataset.records], dtype=np.int64
        )
        self.right = np.array(
            [dataset.index_of(r.right) for r in dataset.records], dtype=np.int64
        )
        self.y = np.array([r.y for r in dataset.records], dtype=float)
        self.phi = np.stack([t.feature_sum for t in dataset.pool])

    def batch_loss_grad(self, model: RewardModel, rec_ids: np.ndarray):
        y = self.y[rec_ids]
        n = len(rec_ids)
        if model.kind in ("linear", "linear_softmax"):
            phi = self.phi[self.left[rec_ids]] - self.phi[self.right[rec_ids]]
            out, cache = model.forward_batch(phi)
            losses, dldd = _loss_terms(out, y)
            return float(losses.mean()), model.backward_batch(cache, dldd / n)
        if self.x_all is None:
            raise ValueError("dataset has no feature map; cannot train an mlp")
        chunks, signs, bounds = [], [], [0]
        for l, r in zip(self.left[rec_ids], self.right[rec_ids]):
            chunks.append(self.traj_rows[l])
            chunks.append(self.traj_rows[r])
            signs.append(np.ones(len(self.traj_rows[l])))
            signs.append(-np.ones(len(self.traj_rows[r])))
            bounds.append(bounds[-1] + len(self.traj_rows[l]) + len(self.traj_rows[r]))
        flat = np.concatenate(chunks)
        sign = np.concatenate(signs)
        local, inverse = np.unique(flat, return_inverse=True)
        out, cache = model.forward_batch(self.x_all[local])
        diffs = np.add.reduceat(out[inverse] * sign, bounds[:-1])
        losses, dldd = _loss_terms(diffs, y)
        step_coef = np.repeat(dldd / n, np.diff(bounds)) * sign
        row_grad = np.bincount(inverse, weights=step_coef, minlength=len(local))
        return float(losses.mean()), model.backward_batch(cache, row_grad)


def train_grounding(
    dataset: PreferenceDataset, model: RewardModel, config: TrainConfig
) -> tuple[RewardModel, np.ndarray]:
    """Mini-batch gradient descent over the preference loss.

    Records are reshuffled every epoch from the config seed; each step
    consumes one batch and logs its pre-update loss. Returns the trained
    model and the per-step loss trace.
    """
    connected, n_comp = check_chain_connectivity(dataset)
    if not connected:
        raise ValueError(f"dataset comparison graph has {n_comp} components")
    compiled = _CompiledPool(dataset)
    rng = generator(config.seed, "batches")
    params = model.params.copy()
    trace = np.empty(config.steps)
    n = len(dataset.records)
    b = min(config.batch_size, n)

    step = 0
    while step < config.steps:
        order = rng.permutation(n)
        for lo in range(0, n, b):
            if step >= config.steps:
                break
            rec_ids = order[lo : lo + b]
            current = model.with_params(params)
            loss, grad = compiled.batch_loss_grad(current, rec_ids)
            if not np.isfinite(loss):
                raise TrainingDivergence(step)
            trace[step] = loss
            params = params - config.learning_rate * grad
            step += 1
    return model.with_params(params), trace


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: RewardModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "input_dim": model.input_dim,
        "hidden": list(model.hidden),
        "params": model.params.tolist(),
    }


def model_from_dict(doc: dict) -> RewardModel:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    return RewardModel(
        doc["kind"],
        int(doc["input_dim"]),
        np.asarray(doc["params"], dtype=float),
        tuple(doc["hidden"]),
    )


def save_model(model: RewardModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path) -> RewardModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_loss_trace(trace: np.ndarray, path) -> None:
    lines = ["step,loss"]
    lines += [f"{i},{float(val)!r}" for i, val in enumerate(np.asarray(trace, dtype=float))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
