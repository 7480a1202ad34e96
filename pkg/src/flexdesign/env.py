"""Finite-horizon MDP that builds a flexibility network one arc per step.

Actions are flattened arc indices ``i * n + j``.  Under ``add_noop`` picking
an arc that is already present is the no-op.  Under ``add_delete_noop`` a
present arc is deleted (refunding its installation cost) and the extra
action ``m * n`` is an explicit no-op.

The observation of a state is the flattened binary network followed by the
fraction of remaining steps ``(K - t) / K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _flow
from .instance import FlexNetwork, Instance, SampleSet, draw_demands

ADD_NOOP = "add_noop"
ADD_DELETE_NOOP = "add_delete_noop"
ACTION_SETS = (ADD_NOOP, ADD_DELETE_NOOP)


@dataclass(frozen=True)
class MdpConfig:
    horizon: int
    omega: int = 50
    variance_reduction: bool = True
    action_set: str = ADD_NOOP
    fresh_samples_per_episode: bool = True
    seed: int = 0
    samples: SampleSet | None = None  # used when fresh_samples_per_episode is False

    def __post_init__(self):
        if self.action_set not in ACTION_SETS:
            raise ValueError(f"unknown action set {self.action_set!r}; expected one of {ACTION_SETS}")
        if self.omega < 1:
            raise ValueError("omega must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.fresh_samples_per_episode:
            if self.samples is None:
                raise ValueError("fixed-sample mode needs a SampleSet")
            if len(self.samples) < self.omega:
                raise ValueError(f"fixed SampleSet holds {len(self.samples)} < omega={self.omega} samples")

    @classmethod
    def for_instance(cls, instance: Instance, **kwargs) -> "MdpConfig":
        return cls(horizon=instance.budget, **kwargs)


@dataclass(frozen=True)
class MdpState:
    network: FlexNetwork
    step: int


@dataclass(frozen=True)
class Transition:
    state: MdpState
    action: int
    reward: float
    next_state: MdpState
    done: bool


def num_actions(instance: Instance, action_set: str) -> int:
    return instance.m * instance.n + (1 if action_set == ADD_DELETE_NOOP else 0)


def observation_size(instance: Instance) -> int:
    return instance.m * instance.n + 1


def encode_observations(F: np.ndarray, steps: np.ndarray, horizon: int) -> np.ndarray:
    """Batch encoding; ``F`` has shape (B, m*n) or (B, m, n)."""
    B = F.shape[0]
    flat = F.reshape(B, -1).astype(float)
    remaining = (horizon - np.asarray(steps, dtype=float)) / horizon
    return np.concatenate([flat, remaining.reshape(B, 1)], axis=1)


def apply_actions(F: np.ndarray, actions: np.ndarray, action_set: str, arc_cost_flat: np.ndarray):
    """Vectorized deterministic transition on flattened networks ``F`` (B, m*n).

    Returns the new networks and the installation rewards.
    """
    F = F.copy()
    actions = np.asarray(actions, dtype=np.int64)
    mn = F.shape[1]
    rewards = np.zeros(F.shape[0])
    rows = np.arange(F.shape[0])
    real = actions < mn
    idx = np.where(real, actions, 0)
    present = F[rows, idx] > 0
    adding = real & ~present
    rewards[adding] = -arc_cost_flat[idx[adding]]
    F[rows[adding], idx[adding]] = 1
    if action_set == ADD_DELETE_NOOP:
        deleting = real & present
        rewards[deleting] = arc_cost_flat[idx[deleting]]
        F[rows[deleting], idx[deleting]] = 0
    return F, rewards


def terminal_profits(instance: Instance, F: np.ndarray, D: np.ndarray, variance_reduction: bool) -> np.ndarray:
    """Mean sampled profit of each final network on its own samples ``D[b]`` (B, omega, n)."""
    p = np.ascontiguousarray(instance.unit_profit)
    c = np.ascontiguousarray(instance.capacities)
    Fs = np.ascontiguousarray(F.reshape(-1, instance.m, instance.n), dtype=float)
    D = np.ascontiguousarray(D, dtype=float)
    vals = _flow.paired_profits(p, c, D, Fs)
    if variance_reduction:
        ones = np.ones_like(Fs)
        vals = vals - _flow.paired_profits(p, c, D, ones)
    return vals.mean(axis=1)


class FdpEnv:
    """Single-episode interface to the MDP, mostly for tests and inspection."""

    def __init__(self, instance: Instance, config: MdpConfig):
        if config.horizon != instance.budget:
            raise ValueError(f"horizon {config.horizon} must equal the instance budget {instance.budget}")
        self.instance = instance
        self.config = config
        self.n_actions = num_actions(instance, config.action_set)
        self._rng = np.random.Generator(np.random.PCG64(config.seed))
        self.last_samples: np.ndarray | None = None

    def reset(self, seed: int | None = None) -> MdpState:
        if seed is not None:
            self._rng = np.random.Generator(np.random.PCG64(seed))
        return MdpState(FlexNetwork.empty(self.instance.m, self.instance.n), 0)

    def observation(self, state: MdpState) -> np.ndarray:
        return encode_observations(state.network.arcs[None], np.array([state.step]), self.config.horizon)[0]

    def _terminal_samples(self) -> np.ndarray:
        cfg = self.config
        if cfg.fresh_samples_per_episode:
            return draw_demands(self.instance.demand_model, self._rng, cfg.omega)
        return cfg.samples.head(cfg.omega)

    def step(self, state: MdpState, action: int) -> Transition:
        K = self.config.horizon
        if state.step >= K:
            raise ValueError(f"episode already finished (step {state.step} >= horizon {K})")
        if not 0 <= int(action) < self.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.n_actions})")
        F = state.network.arcs.reshape(1, -1)
        F_new, r = apply_actions(F, np.array([action]), self.config.action_set, self.instance.arc_cost.ravel())
        reward = float(r[0])
        nxt = MdpState(FlexNetwork(F_new.reshape(self.instance.shape)), state.step + 1)
        done = nxt.step == K
        if done:
            D = self._terminal_samples()
            self.last_samples = D
            reward += float(terminal_profits(self.instance, F_new, D[None], self.config.variance_reduction)[0])
        return Transition(state, int(action), reward, nxt, done)


def reset(config: MdpConfig, instance: Instance) -> MdpState:
    return MdpState(FlexNetwork.empty(instance.m, instance.n), 0)


def step(state: MdpState, action: int, config: MdpConfig, instance: Instance) -> Transition:
    """Stateless step; terminal samples come from ``config.samples`` or a generator
    seeded by ``config.seed``."""
    return FdpEnv(instance, config).step(state, action)
