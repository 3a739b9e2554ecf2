"""Quantified pairwise trajectory-comparison datasets.

The comparison quantity y for a pair is the logistic function of the
alignment difference: y = exp(a_left) / (exp(a_left) + exp(a_right)),
evaluated in log space. Generated datasets always contain a spanning
chain over the trajectory pool, so every pair of pool members is directly
or indirectly compared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .mvdp import FeatureMap, Mvdp, MvdpError, Trajectory
from .seeding import derive_seed, generator
from .solver import p_greedy_policy, sample_trajectories, soft_value_iteration


class DatasetError(ValueError):
    pass


def quantified_comparison(a_left: float, a_right: float) -> float:
    """Logistic preference quantity for two alignments; 0.5 means indifferent."""
    if not (np.isfinite(a_left) and np.isfinite(a_right)):
        raise DatasetError("alignments must be finite")
    return float(expit(a_left - a_right))


def comparison_from_ratings(rate_left: int, rate_right: int, scale: int = 10) -> float:
    """Preference quantity approximated from two ratings on {1..scale}."""
    for r in (rate_left, rate_right):
        if not 1 <= r <= scale:
            raise DatasetError(f"rating {r} outside scale 1..{scale}")
    return float(expit(float(rate_left - rate_right)))


@dataclass(frozen=True)
class PreferenceRecord:
    left: Trajectory
    right: Trajectory
    y: float

    def __post_init__(self):
        if self.left is self.right:
            raise DatasetError("a record must compare two distinct trajectories")
        if not 0.0 <= self.y <= 1.0:
            raise DatasetError(f"y={self.y!r} outside [0, 1]")


@dataclass
class PreferenceDataset:
    """A pool of distinct trajectories plus comparison records over it.

    The feature map travels with the dataset so reward models can evaluate
    per-step features without the originating environment.
    """

    pool: list[Trajectory]
    records: list[PreferenceRecord]
    value_index: int
    features: FeatureMap | None = None
    _pool_index: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pool_index = {id(t): i for i, t in enumerate(self.pool)}
        for rec in self.records:
            if id(rec.left) not in self._pool_index or id(rec.right) not in self._pool_index:
                raise DatasetError("record references a trajectory outside the pool")

    def index_of(self, traj: Trajectory) -> int:
        return self._pool_index[id(traj)]


def check_chain_connectivity(dataset: PreferenceDataset) -> tuple[bool, int]:
    """Union-find over referenced trajectories; (connected, component count)."""
    referenced = sorted(
        {dataset.index_of(r.left) for r in dataset.records}
        | {dataset.index_of(r.right) for r in dataset.records}
    )
    if not referenced:
        return (False, 0)
    parent = {i: i for i in referenced}

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for rec in dataset.records:
        a = find(dataset.index_of(rec.left))
        b = find(dataset.index_of(rec.right))
        if a != b:
            parent[a] = b
    components = len({find(i) for i in referenced})
    return (components == 1, components)


def generate_dataset(
    mvdp: Mvdp,
    value_index: int,
    pool_size: int,
    n_comparisons: int,
    greedy_p: float = 0.8,
    seed: int = 0,
) -> PreferenceDataset:
    """Sample a trajectory pool and quantified comparisons for one value.

    The pool comes from the p-greedy version of the soft policy optimal for
    the value's own reward table. A deterministic spanning chain over the
    pool is inserted first; the remaining comparisons pair distinct pool
    members uniformly at random. y values use ground-truth alignments.
    """
    if pool_size < 2:
        raise DatasetError("pool_size must be >= 2")
    if n_comparisons < pool_size - 1:
        raise DatasetError(
            f"{n_comparisons} comparisons cannot connect a pool of {pool_size}"
        )
    if not 0 <= value_index < mvdp.m:
        raise MvdpError(f"value index {value_index} out of range")

    base = soft_value_iteration(mvdp, mvdp.rewards[value_index], mvdp.horizon)
    sampler = p_greedy_policy(base, greedy_p)
    pool = sample_trajectories(
        mvdp,
        sampler,
        pool_size,
        mvdp.horizon,
        derive_seed(seed, "pool", value_index),
        stop_states=mvdp.terminal_states,
    )

    align = np.array(
        [mvdp.rewards[value_index][t.states, t.actions].sum() for t in pool]
    )

    records: list[PreferenceRecord] = []
    for i in range(pool_size - 1):
        records.append(
            PreferenceRecord(
                pool[i], pool[i + 1], quantified_comparison(align[i], align[i + 1])
            )
        )
    rng = generator(seed, "pairs", value_index)
    while len(records) < n_comparisons:
        i, j = rng.integers(pool_size, size=2)
        if i == j:
            continue
        records.append(
            PreferenceRecord(pool[i], pool[j], quantified_comparison(align[i], align[j]))
        )

    dataset = PreferenceDataset(pool, records, value_index, features=mvdp.features)
    connected, _ = check_chain_connectivity(dataset)
    assert connected, "generator invariant: spanning chain guarantees connectivity"
    return dataset


def save_dataset(dataset: PreferenceDataset, records_path, pool_path) -> None:
    """Records as JSON lines of pool indices; pool in trajectory JSON lines."""
    from .mvdp import save_trajectories

    save_trajectories(dataset.pool, pool_path)
    with open(records_path, "w", encoding="utf-8") as fh:
        for rec in dataset.records:
            fh.write(
                json.dumps(
                    {
                        "left": dataset.index_of(rec.left),
                        "right": dataset.index_of(rec.right),
                        "y": rec.y,
                    }
                )
            )
            fh.write("\n")


def load_dataset(
    records_path, pool_path, value_index: int, features: FeatureMap
) -> PreferenceDataset:
    from .mvdp import load_trajectories

    pool = load_trajectories(pool_path, features)
    records = []
    with open(records_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            records.append(
                PreferenceRecord(pool[doc["left"]], pool[doc["right"]], float(doc["y"]))
            )
    return PreferenceDataset(pool, records, value_index, features=features)
