"""Firefighters environment: a two-value high-rise fire scenario.

States combine fire intensity (5 levels), occupancy (5), equipment
readiness (2), knowledge (2), firefighter condition (4) and floor level
(3): 1200 states in total. Seven actions, deterministic dynamics, and a
rule-based reward pair (professionalism, proximity), both in [-1, 1].
Reaching an incapacitated condition overrides every other reward rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .mvdp import FeatureMap, Mvdp, MvdpError, ValueSet

FIELD_SIZES = (5, 5, 2, 2, 4, 3)  # FI, OC, EQ, KN, FFC, FL
N_STATES = 1200
N_ACTIONS = 7
FEATURE_DIM = sum(FIELD_SIZES) + N_ACTIONS  # one-hot blocks, 28 total
MAX_FIRE = 4

VALUES = ValueSet(("pf", "px"))


class FfAction(IntEnum):
    EVACUATE_OCCUPANTS = 0
    CONTAIN_FIRE = 1
    AGGRESSIVE_FIRE_SUPPRESSION = 2
    PREPARE_EQUIPMENT = 3
    UPDATE_KNOWLEDGE = 4
    GO_UPSTAIRS = 5
    GO_DOWNSTAIRS = 6


@dataclass(frozen=True)
class FfState:
    fire_intensity: int
    occupancy: int
    equipment: int
    knowledge: int
    condition: int
    floor: int

    def __post_init__(self):
        for value, size, name in zip(self.as_tuple(), FIELD_SIZES, self.field_names()):
            if not 0 <= value < size:
                raise MvdpError(f"{name}={value} outside [0, {size - 1}]")

    @staticmethod
    def field_names() -> tuple[str, ...]:
        return ("fire_intensity", "occupancy", "equipment", "knowledge", "condition", "floor")

    def as_tuple(self) -> tuple[int, ...]:
        return (
            self.fire_intensity,
            self.occupancy,
            self.equipment,
            self.knowledge,
            self.condition,
            self.floor,
        )


def ff_state_index(state: FfState) -> int:
    """Mixed-radix index, fire intensity most significant."""
    idx = 0
    for value, size in zip(state.as_tuple(), FIELD_SIZES):
        idx = idx * size + value
    return idx


def ff_state_from_index(index: int) -> FfState:
    if not 0 <= index < N_STATES:
        raise MvdpError(f"state index {index} outside [0, {N_STATES - 1}]")
    fields = []
    for size in reversed(FIELD_SIZES):
        fields.append(index % size)
        index //= size
    return FfState(*reversed(fields))


def ff_transition(state: FfState, action: FfAction) -> FfState:
    """Deterministic next state; every rule condition reads the current state."""
    fi, oc, eq, kn, ffc, fl = state.as_tuple()
    action = FfAction(action)
    if action == FfAction.EVACUATE_OCCUPANTS:
        if fi >= 3 and eq == 0 and kn == 0:
            ffc = max(0, ffc - 1)
        if state.fire_intensity == MAX_FIRE:
            eq = 0
        oc = max(0, oc - 1)
    elif action == FfAction.CONTAIN_FIRE:
        fi = max(0, fi - 1)
    elif action == FfAction.AGGRESSIVE_FIRE_SUPPRESSION:
        if fi >= 3 and (eq == 0 or kn == 0):
            ffc = max(0, ffc - 1)
        if state.fire_intensity == MAX_FIRE:
            eq = 0
        fi = max(0, fi - 2)
    elif action == FfAction.PREPARE_EQUIPMENT:
        eq = 1
    elif action == FfAction.UPDATE_KNOWLEDGE:
        kn = 1
    elif action == FfAction.GO_UPSTAIRS:
        fl = min(FIELD_SIZES[5] - 1, fl + 1)
    else:  # GO_DOWNSTAIRS
        fl = max(0, fl - 1)
    return FfState(fi, oc, eq, kn, ffc, fl)


def ff_reward(state: FfState, action: FfAction, next_state: FfState) -> tuple[float, float]:
    """(professionalism, proximity) for a transition.

    Requires next_state == ff_transition(state, action). An incapacitated
    next state forces (-1, -1) regardless of everything else.
    """
    if next_state != ff_transition(state, action):
        raise MvdpError("next_state is not the transition result for (state, action)")
    if next_state.condition == 0:
        return (-1.0, -1.0)
    action = FfAction(action)
    if action in (FfAction.GO_UPSTAIRS, FfAction.GO_DOWNSTAIRS):
        return (0.0, 0.0)
    if action == FfAction.EVACUATE_OCCUPANTS:
        if state.occupancy == 0:
            return (-1.0, -1.0)
        return (1.0 - 0.2 * state.fire_intensity - 0.1 * state.knowledge, 1.0)
    if action == FfAction.CONTAIN_FIRE:
        if state.fire_intensity == 0:
            return (-1.0, -1.0)
        return (0.8, 0.2)
    if action == FfAction.AGGRESSIVE_FIRE_SUPPRESSION:
        if state.fire_intensity == 0:
            return (-1.0, -1.0)
        return (0.3, 0.5) if state.equipment == 0 else (0.6, 0.5)
    if action == FfAction.PREPARE_EQUIPMENT:
        return (0.5, -0.1) if state.equipment == 0 else (-1.0, -1.0)
    # UPDATE_KNOWLEDGE
    return (1.0, -0.5) if state.knowledge == 0 else (-1.0, -1.0)


def ff_encode_features(state: FfState, action: FfAction) -> np.ndarray:
    """One-hot blocks for each state field followed by the action: 28 dims."""
    vec = np.zeros(FEATURE_DIM)
    offset = 0
    for value, size in zip(state.as_tuple(), FIELD_SIZES):
        vec[offset + value] = 1.0
        offset += size
    vec[offset + int(action)] = 1.0
    return vec


def _feature_table() -> np.ndarray:
    table = np.zeros((N_STATES, N_ACTIONS, FEATURE_DIM))
    for s in range(N_STATES):
        state = ff_state_from_index(s)
        for a in range(N_ACTIONS):
            table[s, a] = ff_encode_features(state, FfAction(a))
    return table


def ff_build_mvdp(horizon: int = 50) -> Mvdp:
    """Materialize the full tabular process.

    Start states are uniform over the 900 states where the firefighter is
    not already incapacitated; an incapacitated episode earns -1 per value
    on every step and is not a meaningful starting condition.
    """
    if horizon < 1:
        raise MvdpError("horizon must be >= 1")
    next_state = np.zeros((N_STATES, N_ACTIONS), dtype=np.int64)
    rewards = np.zeros((2, N_STATES, N_ACTIONS))
    for s in range(N_STATES):
        state = ff_state_from_index(s)
        for a in range(N_ACTIONS):
            nxt = ff_transition(state, FfAction(a))
            next_state[s, a] = ff_state_index(nxt)
            rewards[:, s, a] = ff_reward(state, FfAction(a), nxt)

    able = np.array(
        [ff_state_from_index(s).condition != 0 for s in range(N_STATES)], dtype=float
    )
    return Mvdp.from_successors(
        next_state,
        values=VALUES,
        rewards=rewards,
        features=FeatureMap.from_table(_feature_table()),
        horizon=horizon,
        initial_dist=able / able.sum(),
    )


def ff_dump_tables(path) -> None:
    """CSV of the full transition and reward tables, one row per (s, a)."""
    names = FfState.field_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            list(names) + ["action"] + [f"next_{n}" for n in names] + ["r_pf", "r_px"]
        )
        for s in range(N_STATES):
            state = ff_state_from_index(s)
            for a in range(N_ACTIONS):
                nxt = ff_transition(state, FfAction(a))
                r_pf, r_px = ff_reward(state, FfAction(a), nxt)
                writer.writerow(
                    list(state.as_tuple())
                    + [FfAction(a).name]
                    + list(nxt.as_tuple())
                    + [repr(r_pf), repr(r_px)]
                )
