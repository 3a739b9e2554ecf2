"""Planning and rollout machinery for scalar-reward processes.

Soft value iteration runs the finite-horizon logsumexp Bellman recursion
and extracts the stationary maximum-entropy policy at t=0. Visitation
matrices are expected (or empirical) state-action counts over the horizon;
their total mass equals the horizon for any normalized start distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mvdp import Mvdp, MvdpError, Trajectory
from .seeding import generator

ROW_TOL = 1e-9


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class Policy:
    """Stochastic stationary policy; rows sum to 1 over the valid actions."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise SolverError("policy must be a (S, A) matrix")
        if np.any(p < -ROW_TOL) or np.any(p > 1 + ROW_TOL):
            raise SolverError("policy entries outside [0, 1]")
        rows = p.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_TOL):
            bad = int(np.argmax(np.abs(rows - 1.0)))
            raise SolverError(f"policy row {bad} sums to {rows[bad]!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class VisitationMatrix:
    """Non-negative expected or empirical (state, action) counts."""

    mu: np.ndarray

    def __post_init__(self):
        m = np.array(self.mu, dtype=float)
        if m.ndim != 2:
            raise SolverError("visitation matrix must be (S, A)")
        if not np.isfinite(m).all():
            raise SolverError("visitation matrix has non-finite entries")
        if m.min() < -1e-12:
            raise SolverError("visitation matrix has negative entries")
        m.setflags(write=False)
        object.__setattr__(self, "mu", m)

    @property
    def total_mass(self) -> float:
        return float(self.mu.sum())


def _masked_softmax_rows(q: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row softmax over valid entries. Returns (probs, logsumexp)."""
    neg = np.where(valid, q, -np.inf)
    peak = neg.max(axis=1, keepdims=True)
    expd = np.exp(neg - peak)
    expd[~valid] = 0.0
    z = expd.sum(axis=1, keepdims=True)
    probs = expd / z
    lse = (peak + np.log(z)).ravel()
    return probs, lse


def soft_value_iteration(mvdp: Mvdp, reward: np.ndarray, horizon: int) -> Policy:
    """Finite-horizon maximum-entropy policy for a scalar reward table.

    Backward recursion with V_H = 0, Q_t = R + T V_{t+1},
    V_t = logsumexp_a Q_t; the stationary policy is softmax(Q_0 - V_0).
    Invariant under adding a constant to every reward entry.
    """
    r = np.asarray(reward, dtype=float)
    if r.shape != (mvdp.n_states, mvdp.n_actions):
        raise SolverError(f"reward shape {r.shape}, expected (S, A)")
    if not np.isfinite(r).all():
        raise SolverError("reward table has non-finite entries")
    if horizon < 1:
        raise SolverError("horizon must be >= 1")

    valid = mvdp.valid_actions
    v = np.zeros(mvdp.n_states)
    q = None
    for _ in range(horizon):
        q = r + (mvdp.transition @ v).reshape(mvdp.n_states, mvdp.n_actions)
        probs, v = _masked_softmax_rows(q, valid)
    if not np.isfinite(v).all() or not np.isfinite(probs).all():
        raise SolverError("soft value iteration overflowed; reward scale invalid")
    return Policy(probs)


def visitation_from_policy(mvdp: Mvdp, policy: Policy, horizon: int) -> VisitationMatrix:
    """Expected state-action counts over `horizon` steps of the policy."""
    if policy.probs.shape != (mvdp.n_states, mvdp.n_actions):
        raise SolverError("policy shape does not match the process")
    d = mvdp.initial_dist.copy()
    mu = np.zeros((mvdp.n_states, mvdp.n_actions))
    for _ in range(horizon):
        joint = d[:, None] * policy.probs
        mu += joint
        d = mvdp.transition.T @ joint.reshape(-1)
    return VisitationMatrix(mu)


def visitation_from_trajectories(
    trajs: Sequence[Trajectory], n_states: int, n_actions: int
) -> VisitationMatrix:
    """Mean per-trajectory (state, action) occurrence counts."""
    if len(trajs) == 0:
        raise SolverError("need at least one trajectory")
    mu = np.zeros((n_states, n_actions))
    for traj in trajs:
        np.add.at(mu, (traj.states, traj.actions), 1.0)
    return VisitationMatrix(mu / len(trajs))


def p_greedy_policy(base: Policy, p: float) -> Policy:
    """Mix uniform exploration (weight p) with the base policy's argmax.

    The uniform part spreads over the base policy's support (its valid
    actions); argmax ties break toward the lowest action index.
    """
    if not 0.0 <= p <= 1.0:
        raise SolverError(f"p must be in [0, 1], got {p!r}")
    support = base.probs > 0.0
    counts = support.sum(axis=1)
    probs = np.where(support, p / counts[:, None], 0.0)
    masked = np.where(support, base.probs, -np.inf)
    best = masked.argmax(axis=1)
    probs[np.arange(base.n_states), best] += 1.0 - p
    return Policy(probs)


def _row_sampler(mvdp: Mvdp):
    """Returns draw(state, action, u) -> next state, from the CSR rows."""
    nxt = mvdp.successors()
    if nxt is not None:
        return lambda s, a, u: int(nxt[s, a])
    t = mvdp.transition
    indptr, indices, data = t.indptr, t.indices, t.data

    def draw(s: int, a: int, u: float) -> int:
        lo, hi = indptr[s * mvdp.n_actions + a], indptr[s * mvdp.n_actions + a + 1]
        cum = np.cumsum(data[lo:hi])
        k = int(np.searchsorted(cum, u * cum[-1], side="right"))
        return int(indices[lo + min(k, hi - lo - 1)])

    return draw


def sample_trajectories(
    mvdp: Mvdp,
    policy: Policy,
    count: int,
    horizon: int,
    seed: int,
    stop_states: Iterable[int] | None = None,
) -> list[Trajectory]:
    """Sample `count` trajectories of length <= horizon under the policy.

    Each trajectory draws from its own derived random stream, so results
    are reproducible and order-independent. A step at a stop state is
    recorded and then the trajectory ends.
    """
    if count < 1:
        raise SolverError("count must be >= 1")
    stops = frozenset(int(s) for s in (stop_states or ()))
    draw_next = _row_sampler(mvdp)
    action_cdf = np.cumsum(policy.probs, axis=1)
    start_cdf = np.cumsum(mvdp.initial_dist)

    out: list[Trajectory] = []
    for i in range(count):
        rng = generator(seed, "traj", i)
        u = rng.random(2 * horizon + 1)
        s = int(np.searchsorted(start_cdf, u[0] * start_cdf[-1], side="right"))
        s = min(s, mvdp.n_states - 1)
        steps: list[tuple[int, int]] = []
        for t in range(horizon):
            row = action_cdf[s]
            a = int(np.searchsorted(row, u[1 + 2 * t] * row[-1], side="right"))
            a = min(a, mvdp.n_actions - 1)
            steps.append((s, a))
            if s in stops:
                break
            s = draw_next(s, a, u[2 + 2 * t])
        out.append(Trajectory.build(steps, mvdp.features))
    return out
