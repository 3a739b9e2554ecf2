"""Core data model: multi-value decision processes and trajectories.

A decision process carries one reward table per named value. Trajectory
alignment with a value is the sum of that value's rewards along the
trajectory; an agent's value system is a point on the weight simplex that
scalarizes the per-value alignments linearly.

All types are immutable after construction and safe to share between
threads. Transition dynamics are stored row-sparse (one CSR row per
(state, action) pair), which keeps deterministic environments O(1) per
backup while still supporting arbitrary stochastic tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

MVDP_FORMAT_VERSION = 1

PROB_TOL = 1e-9


class MvdpError(ValueError):
    """Malformed decision-process component."""


@dataclass(frozen=True)
class ValueSet:
    """Ordered, unique value labels. The length m is fixed for any process using it."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 1:
            raise MvdpError("a value set needs at least one label")
        if any(not lab for lab in self.labels):
            raise MvdpError("value labels must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise MvdpError(f"duplicate value labels: {self.labels}")

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class FeatureMap:
    """Deterministic map from (state, action) to a fixed-length feature vector."""

    dim: int
    eval: Callable[[int, int], np.ndarray]

    def __call__(self, state: int, action: int) -> np.ndarray:
        out = np.asarray(self.eval(state, action), dtype=float)
        if out.shape != (self.dim,):
            raise MvdpError(
                f"feature map returned shape {out.shape}, expected ({self.dim},)"
            )
        return out

    @staticmethod
    def from_table(table: np.ndarray) -> "FeatureMap":
        """Feature map backed by a dense (n_states, n_actions, dim) table."""
        table = np.asarray(table, dtype=float)
        if table.ndim != 3:
            raise MvdpError("feature table must have shape (S, A, p)")
        return FeatureMap(dim=table.shape[2], eval=lambda s, a: table[s, a])


class Trajectory:
    """A finite (state, action) sequence with its cached feature sum.

    The per-feature sum is computed once at construction; the grounding
    loss touches each trajectory thousands of times.
    """

    __slots__ = ("steps", "feature_sum", "states", "actions")

    def __init__(self, steps: Sequence[tuple[int, int]], feature_sum: np.ndarray):
        if len(steps) == 0:
            raise MvdpError("a trajectory needs at least one step")
        self.steps = tuple((int(s), int(a)) for s, a in steps)
        self.states = np.array([s for s, _ in self.steps], dtype=np.int64)
        self.actions = np.array([a for _, a in self.steps], dtype=np.int64)
        fs = np.asarray(feature_sum, dtype=float)
        fs.setflags(write=False)
        self.feature_sum = fs

    @classmethod
    def build(cls, steps: Sequence[tuple[int, int]], features: FeatureMap) -> "Trajectory":
        total = np.zeros(features.dim)
        for s, a in steps:
            total += features(s, a)
        return cls(steps, total)

    def __len__(self) -> int:
        return len(self.steps)

    def __repr__(self) -> str:
        return f"Trajectory(len={len(self.steps)}, start={self.steps[0]})"


@dataclass(frozen=True)
class ValueSystemWeights:
    """A point on the unit (m-1)-simplex: non-negative weights summing to 1."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or w.size < 1:
            raise MvdpError("weights must be a non-empty vector")
        if np.any(w < 0):
            raise MvdpError(f"negative weight in {w}")
        if abs(w.sum() - 1.0) > PROB_TOL:
            raise MvdpError(f"weights sum to {w.sum()!r}, expected 1")

    @classmethod
    def normalized(cls, raw: Iterable[float]) -> "ValueSystemWeights":
        """Rescale non-negative raw weights to sum exactly to 1."""
        v = np.asarray(list(raw), dtype=float)
        total = v.sum()
        if total <= 0:
            raise MvdpError("cannot normalize weights with non-positive sum")
        return cls(v / total)

    @property
    def m(self) -> int:
        return self.w.size


class Mvdp:
    """Finite multi-value decision process.

    Attributes:
        n_states, n_actions: dense index ranges for states and actions.
        transition: CSR matrix of shape (S*A, S); row s*A+a holds T(s,a,.).
        values: the value labels (length m).
        rewards: float array of shape (m, S, A), one table per value.
        features: FeatureMap for observable state-action properties.
        horizon: episode length used by planning and sampling defaults.
        initial_dist: start-state probability vector.
        valid_actions: bool (S, A); rows of invalid pairs are ignored by
            planning. Defaults to all valid.
        terminal_states: states treated as absorbing stop states by
            samplers; dynamics must already encode the absorbing self-loop.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        transition: sp.spmatrix,
        values: ValueSet,
        rewards: np.ndarray,
        features: FeatureMap,
        horizon: int,
        initial_dist: np.ndarray | None = None,
        valid_actions: np.ndarray | None = None,
        terminal_states: Iterable[int] = (),
    ):
        if n_states < 1 or n_actions < 1:
            raise MvdpError("n_states and n_actions must be positive")
        if horizon < 1:
            raise MvdpError("horizon must be >= 1")
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.horizon = int(horizon)
        self.values = values

        t = sp.csr_matrix(transition, copy=True)
        if t.shape != (n_states * n_actions, n_states):
            raise MvdpError(
                f"transition shape {t.shape}, expected {(n_states * n_actions, n_states)}"
            )
        t.sum_duplicates()
        self.transition = t

        r = np.array(rewards, dtype=float)
        if r.shape != (values.m, n_states, n_actions):
            raise MvdpError(
                f"rewards shape {r.shape}, expected {(values.m, n_states, n_actions)}"
            )
        r.setflags(write=False)
        self.rewards = r

        self.features = features

        if initial_dist is None:
            live = np.ones(n_states)
            for s in terminal_states:
                live[s] = 0.0
            if live.sum() == 0:
                live[:] = 1.0
            initial_dist = live / live.sum()
        d = np.array(initial_dist, dtype=float)
        if d.shape != (n_states,):
            raise MvdpError("initial_dist must have one entry per state")
        d.setflags(write=False)
        self.initial_dist = d

        if valid_actions is None:
            valid_actions = np.ones((n_states, n_actions), dtype=bool)
        va = np.array(valid_actions, dtype=bool)
        if va.shape != (n_states, n_actions):
            raise MvdpError("valid_actions must have shape (S, A)")
        if not va.any(axis=1).all():
            bad = int(np.flatnonzero(~va.any(axis=1))[0])
            raise MvdpError(f"state {bad} has no valid action")
        va.setflags(write=False)
        self.valid_actions = va

        self.terminal_states = frozenset(int(s) for s in terminal_states)
        self._successor_cache: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.values.m

    @classmethod
    def from_dense(cls, transition: np.ndarray, **kwargs) -> "Mvdp":
        """Build from a dense (S, A, S) transition tensor."""
        t = np.asarray(transition, dtype=float)
        s, a, s2 = t.shape
        if s != s2:
            raise MvdpError("dense transition tensor must be (S, A, S)")
        return cls(s, a, sp.csr_matrix(t.reshape(s * a, s)), **kwargs)

    @classmethod
    def from_successors(cls, next_state: np.ndarray, **kwargs) -> "Mvdp":
        """Build a deterministic process from a (S, A) successor table."""
        nxt = np.asarray(next_state, dtype=np.int64)
        s, a = nxt.shape
        rows = np.arange(s * a)
        t = sp.csr_matrix(
            (np.ones(s * a), (rows, nxt.reshape(-1))), shape=(s * a, s)
        )
        return cls(s, a, t, **kwargs)

    def transition_dense(self) -> np.ndarray:
        """Materialize T as a dense (S, A, S) tensor. Small processes only."""
        return np.asarray(self.transition.todense()).reshape(
            self.n_states, self.n_actions, self.n_states
        )

    def successors(self) -> np.ndarray | None:
        """(S, A) successor table when every valid row is deterministic, else None."""
        if self._successor_cache is not None:
            return self._successor_cache
        t = self.transition
        counts = np.diff(t.indptr)
        flat_valid = self.valid_actions.reshape(-1)
        if np.any(counts[flat_valid] != 1):
            return None
        nxt = np.zeros(self.n_states * self.n_actions, dtype=np.int64)
        # indptr[row] points at the single entry of each deterministic row
        has = counts > 0
        nxt[has] = t.indices[t.indptr[:-1][has]]
        self._successor_cache = nxt.reshape(self.n_states, self.n_actions)
        return self._successor_cache

    def check_trajectory(self, traj: Trajectory) -> None:
        if traj.states.min() < 0 or traj.states.max() >= self.n_states:
            raise MvdpError("trajectory state out of range")
        if traj.actions.min() < 0 or traj.actions.max() >= self.n_actions:
            raise MvdpError("trajectory action out of range")


def trajectory_alignment(mvdp: Mvdp, value_index: int, traj: Trajectory) -> float:
    """Sum of one value's rewards along a trajectory. Additive over concatenation."""
    if not 0 <= value_index < mvdp.m:
        raise MvdpError(f"value index {value_index} out of range for m={mvdp.m}")
    mvdp.check_trajectory(traj)
    return float(mvdp.rewards[value_index][traj.states, traj.actions].sum())


def grounding_of_trajectory(mvdp: Mvdp, traj: Trajectory) -> np.ndarray:
    """Vector of all m per-value alignments of a trajectory."""
    mvdp.check_trajectory(traj)
    return mvdp.rewards[:, traj.states, traj.actions].sum(axis=1)


def value_system_alignment(
    mvdp: Mvdp, weights: ValueSystemWeights, traj: Trajectory
) -> float:
    """Weighted alignment: dot(weights, grounding). Equals summing the
    scalarized per-step rewards, by linearity."""
    if weights.m != mvdp.m:
        raise MvdpError(f"weights have {weights.m} entries, process has {mvdp.m}")
    return float(weights.w @ grounding_of_trajectory(mvdp, traj))


def scalarize_rewards(mvdp: Mvdp, weights: ValueSystemWeights) -> np.ndarray:
    """Collapse the per-value reward tables into one (S, A) table."""
    if weights.m != mvdp.m:
        raise MvdpError(f"weights have {weights.m} entries, process has {mvdp.m}")
    return np.tensordot(weights.w, mvdp.rewards, axes=1)


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "valid" if self.ok else "\n".join(self.violations)


def validate_mvdp(mvdp: Mvdp) -> ValidationReport:
    """Report every violated probabilistic invariant; empty report iff valid."""
    out: list[str] = []
    S, A = mvdp.n_states, mvdp.n_actions

    probs = mvdp.transition.data
    if probs.size and (probs.min() < -PROB_TOL or probs.max() > 1 + PROB_TOL):
        out.append(
            f"transition probabilities outside [0,1]: min={probs.min()!r} max={probs.max()!r}"
        )
    row_sums = np.asarray(mvdp.transition.sum(axis=1)).reshape(S, A)
    bad = np.argwhere(
        mvdp.valid_actions & (np.abs(row_sums - 1.0) > PROB_TOL)
    )
    for s, a in bad:
        out.append(f"transition row (s={s}, a={a}) sums to {row_sums[s, a]!r}")

    finite = np.isfinite(mvdp.rewards)
    if not finite.all():
        for v, s, a in np.argwhere(~finite):
            out.append(
                f"non-finite reward (value={mvdp.values.labels[v]}, s={s}, a={a})"
            )

    d = mvdp.initial_dist
    if d.min() < -PROB_TOL or d.max() > 1 + PROB_TOL:
        out.append("initial_dist entries outside [0,1]")
    if abs(d.sum() - 1.0) > PROB_TOL:
        out.append(f"initial_dist sums to {d.sum()!r}")

    return ValidationReport(out)


# ---------------------------------------------------------------------------
# Serialization. The JSON document sparse-encodes transitions as
# (s, a, s', prob) rows; the feature map is stored as a dense table so a
# loaded process is fully usable.
# ---------------------------------------------------------------------------


def mvdp_to_dict(mvdp: Mvdp) -> dict:
    coo = mvdp.transition.tocoo()
    triplets = sorted(
        (int(r) // mvdp.n_actions, int(r) % mvdp.n_actions, int(c), float(v))
        for r, c, v in zip(coo.row, coo.col, coo.data)
    )
    feat_table = np.stack(
        [
            np.stack([mvdp.features(s, a) for a in range(mvdp.n_actions)])
            for s in range(mvdp.n_states)
        ]
    )
    doc = {
        "version": MVDP_FORMAT_VERSION,
        "n_states": mvdp.n_states,
        "n_actions": mvdp.n_actions,
        "values": list(mvdp.values.labels),
        "horizon": mvdp.horizon,
        "transition": [list(t) for t in triplets],
        "rewards": mvdp.rewards.tolist(),
        "features": feat_table.tolist(),
        "initial_dist": mvdp.initial_dist.tolist(),
        "terminal_states": sorted(mvdp.terminal_states),
    }
    if not mvdp.valid_actions.all():
        doc["valid_actions"] = mvdp.valid_actions.astype(int).tolist()
    return doc


def mvdp_from_dict(doc: dict) -> Mvdp:
    if doc.get("version") != MVDP_FORMAT_VERSION:
        raise MvdpError(f"unsupported document version {doc.get('version')!r}")
    S, A = int(doc["n_states"]), int(doc["n_actions"])
    trip = doc["transition"]
    rows = [s * A + a for s, a, _, _ in trip]
    cols = [s2 for _, _, s2, _ in trip]
    vals = [p for _, _, _, p in trip]
    t = sp.csr_matrix((vals, (rows, cols)), shape=(S * A, S))
    valid = doc.get("valid_actions")
    return Mvdp(
        S,
        A,
        t,
        ValueSet(tuple(doc["values"])),
        np.asarray(doc["rewards"], dtype=float),
        FeatureMap.from_table(np.asarray(doc["features"], dtype=float)),
        int(doc["horizon"]),
        initial_dist=np.asarray(doc["initial_dist"], dtype=float),
        valid_actions=None if valid is None else np.asarray(valid, dtype=bool),
        terminal_states=doc.get("terminal_states", ()),
    )


def save_mvdp(mvdp: Mvdp, path) -> None:
    Path(path).write_text(json.dumps(mvdp_to_dict(mvdp)), encoding="utf-8")


def load_mvdp(path) -> Mvdp:
    return mvdp_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_trajectories(trajs: Sequence[Trajectory], path) -> None:
    """One JSON line per trajectory: {"steps": [[s, a], ...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(json.dumps({"steps": [[s, a] for s, a in traj.steps]}))
            fh.write("\n")


def load_trajectories(path, features: FeatureMap) -> list[Trajectory]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            steps = [(int(s), int(a)) for s, a in json.loads(line)["steps"]]
            out.append(Trajectory.build(steps, features))
    return out
