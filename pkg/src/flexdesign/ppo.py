"""PPO-Clip with GAE for the network-design MDP.

One epoch collects a batch of complete episodes with the current stochastic
policy, then runs up to ``policy_iters`` full-batch Adam ascent steps on the
clipped surrogate (stopping once the approximate KL exceeds ``target_kl``)
and ``value_iters`` descent steps on the squared rewards-to-go residual.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .env import (
    MdpConfig,
    apply_actions,
    encode_observations,
    num_actions,
    observation_size,
    terminal_profits,
)
from .instance import FlexNetwork, Instance, SampleSet, draw_demands, sample_demand
from .oracle import fdp_objective_estimate, profits

log = logging.getLogger(__name__)

EVAL_SEED = 2_147_483_647
REPORT_COLUMNS = ["step", "epoch", "mean_return", "value_loss", "approx_kl", "clip_frac", "eval_profit", "wallclock_s"]


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.999
    clip_ratio: float = 0.2
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    policy_iters: int = 80
    value_iters: int = 80
    target_kl: float = 0.01
    episodes_per_epoch: int = 800
    early_stop_steps: int = 48_000
    max_steps: int = 5_000_000
    max_epochs: int | None = None
    seed: int = 0
    hidden_sizes: tuple = (1024, 128)
    eval_samples: int = 5000
    eval_seed: int = EVAL_SEED
    eval_candidates: int = 10  # most frequent sampled final networks scored each epoch, besides the argmax one
    reward_scale: float | None = None  # None: 1 / mean full-network profit
    normalize_advantages: bool = True
    record_wallclock: bool = False

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip ratio must be positive")


@dataclass
class Trajectory:
    """A batch of equal-length episodes; every array has leading shape (episodes, K)."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    final_networks: np.ndarray
    rewards_to_go: np.ndarray | None = None
    advantages: np.ndarray | None = None

    @property
    def episodes(self) -> int:
        return int(self.actions.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[1])


@dataclass
class Agent:
    policy: nn.MlpParams
    value: nn.MlpParams
    policy_opt: nn.AdamState
    value_opt: nn.AdamState

    @classmethod
    def fresh(cls, policy: nn.MlpParams, value: nn.MlpParams) -> "Agent":
        return cls(policy, value, nn.AdamState.for_params(policy), nn.AdamState.for_params(value))

    def copy(self) -> "Agent":
        return Agent(self.policy.copy(), self.value.copy(), self.policy_opt.copy(), self.value_opt.copy())


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    best_network: FlexNetwork | None = None
    best_eval: float = -np.inf
    total_steps: int = 0
    stopped_early: bool = False

    def add(self, **row) -> None:
        if self.rows and row["step"] < self.rows[-1]["step"]:
            raise ValueError("step counter must be monotone")
        self.rows.append({k: row.get(k, "") for k in REPORT_COLUMNS})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def steps_to_reach(self, target: float) -> int | None:
        """First environment-step count whose evaluation reaches ``target``."""
        for r in self.rows:
            if r["eval_profit"] != "" and r["eval_profit"] >= target:
                return int(r["step"])
        return None

    @property
    def final_eval(self) -> float:
        return self.best_eval


def _improves(score: float, best: float) -> bool:
    if not np.isfinite(best):
        return True
    return score > best + 1e-9 * max(1.0, abs(best))


def compute_rewards_to_go(rewards, gamma: float) -> np.ndarray:
    """Discounted suffix sums along the last axis."""
    r = np.asarray(rewards, dtype=float)
    out = np.zeros_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., t] + gamma * acc
        out[..., t] = acc
    return out


def compute_gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates with a zero terminal value."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    v_next = np.concatenate([v[..., 1:], np.zeros(v.shape[:-1] + (1,))], axis=-1)
    deltas = r + gamma * v_next - v
    return compute_rewards_to_go(deltas, gamma * lam)


def clip_objective(eps: float, adv):
    """The clipped target: (1 + eps) A for A >= 0, (1 - eps) A otherwise."""
    adv = np.asarray(adv, dtype=float)
    return np.where(adv >= 0, (1.0 + eps) * adv, (1.0 - eps) * adv)


def clipped_surrogate(logp_new, logp_old, adv, eps: float) -> tuple[float, np.ndarray]:
    """Mean clipped surrogate and its derivative wrt ``logp_new``."""
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    target = clip_objective(eps, adv)
    active = unclipped <= target
    obj = np.where(active, unclipped, target)
    N = obj.size
    return float(obj.mean()), np.where(active, unclipped, 0.0) / N


def policy_sizes(instance: Instance, action_set: str, hidden) -> list[int]:
    return [observation_size(instance), *hidden, num_actions(instance, action_set)]


def value_sizes(instance: Instance, hidden) -> list[int]:
    return [observation_size(instance), *hidden, 1]


def init_agent(instance: Instance, action_set: str, config: PpoConfig, rng: np.random.Generator) -> Agent:
    policy = nn.init_mlp(policy_sizes(instance, action_set, config.hidden_sizes), rng, output_gain=0.01)
    value = nn.init_mlp(value_sizes(instance, config.hidden_sizes), rng, output_gain=1.0)
    return Agent.fresh(policy, value)


def _sample_actions(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(logp.shape[0]) * cdf[:, -1]
    a = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(a, logp.shape[1] - 1)


def rollout_networks(
    policy: nn.MlpParams, instance: Instance, config: MdpConfig, rng: np.random.Generator | None, count: int
) -> np.ndarray:
    """Final networks (count, m*n) of policy rollouts; ``rng=None`` decodes greedily."""
    K = config.horizon
    F = np.zeros((count, instance.m * instance.n))
    cost = instance.arc_cost.ravel()
    for t in range(K):
        obs = encode_observations(F, np.full(count, t), K)
        logp = nn.log_softmax(nn.forward(policy, obs))
        a = np.argmax(logp, axis=1) if rng is None else _sample_actions(logp, rng)
        F, _ = apply_actions(F, a, config.action_set, cost)
    return F


def collect(agent: Agent, instance: Instance, config: MdpConfig, episodes: int, rng: np.random.Generator) -> Trajectory:
    """Run ``episodes`` episodes in lockstep under the current policy."""
    K = config.horizon
    mn = instance.m * instance.n
    F = np.zeros((episodes, mn))
    cost = instance.arc_cost.ravel()
    obs_all = np.empty((episodes, K, mn + 1))
    acts = np.empty((episodes, K), dtype=np.int64)
    rews = np.empty((episodes, K))
    logps = np.empty((episodes, K))
    vals = np.empty((episodes, K))
    for t in range(K):
        obs = encode_observations(F, np.full(episodes, t), K)
        logp = nn.log_softmax(nn.forward(agent.policy, obs))
        a = _sample_actions(logp, rng)
        obs_all[:, t] = obs
        acts[:, t] = a
        logps[:, t] = logp[np.arange(episodes), a]
        vals[:, t] = nn.forward(agent.value, obs)[:, 0]
        F, rews[:, t] = apply_actions(F, a, config.action_set, cost)
    if config.fresh_samples_per_episode:
        D = draw_demands(instance.demand_model, rng, episodes * config.omega).reshape(episodes, config.omega, instance.n)
    else:
        D = np.broadcast_to(config.samples.head(config.omega), (episodes, config.omega, instance.n))
    rews[:, K - 1] += terminal_profits(instance, F, D, config.variance_reduction)
    return Trajectory(obs_all, acts, rews, logps, vals, F)


def finish_trajectory(traj: Trajectory, gamma: float, lam: float, scale: float = 1.0) -> Trajectory:
    r = traj.rewards * scale
    traj.rewards_to_go = compute_rewards_to_go(r, gamma)
    traj.advantages = compute_gae(r, traj.values, gamma, lam)
    return traj


def policy_surrogate_grad(policy: nn.MlpParams, obs, actions, logp_old, adv, eps: float):
    """Surrogate value, its parameter gradient, new log-probs and clip fraction."""
    out, cache = nn.forward_cached(policy, obs)
    logp_all = nn.log_softmax(out)
    rows = np.arange(actions.size)
    logp_new = logp_all[rows, actions]
    obj, dlogp = clipped_surrogate(logp_new, logp_old, adv, eps)
    # d logp(a) / d logits = onehot(a) - softmax
    cot = -np.exp(logp_all) * dlogp[:, None]
    cot[rows, actions] += dlogp
    grad = nn.backward(policy, obs, cot, cache)
    ratio = np.exp(logp_new - logp_old)
    clip_frac = float(np.mean((ratio > 1 + eps) | (ratio < 1 - eps)))
    return obj, grad, logp_new, clip_frac


def ppo_update(agent: Agent, traj: Trajectory, config: PpoConfig) -> dict:
    """In-place PPO update of ``agent`` from a finished trajectory batch."""
    obs = traj.observations.reshape(-1, traj.observations.shape[-1])
    actions = traj.actions.ravel()
    logp_old = traj.logp.ravel()
    adv = traj.advantages.ravel().copy()
    ret = traj.rewards_to_go.ravel()
    if config.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stats = {"policy_iters": 0, "approx_kl": 0.0, "clip_frac": 0.0}
    for _ in range(config.policy_iters):
        obj, grad, logp_new, clip_frac = policy_surrogate_grad(agent.policy, obs, actions, logp_old, adv, config.clip_ratio)
        kl = float(np.mean(logp_old - logp_new))
        if not np.isfinite(obj) or not np.isfinite(kl):
            raise NumericalError(f"non-finite policy objective {obj} / kl {kl}")
        stats["approx_kl"], stats["clip_frac"] = kl, clip_frac
        if kl > config.target_kl:
            break
        agent.policy, agent.policy_opt = nn.adam_step(agent.policy, grad, agent.policy_opt, config.policy_lr, maximize=True)
        stats["policy_iters"] += 1
    vloss = np.nan
    for _ in range(config.value_iters):
        out, cache = nn.forward_cached(agent.value, obs)
        resid = out[:, 0] - ret
        vloss = float(np.mean(resid**2))
        if not np.isfinite(vloss):
            raise NumericalError(f"non-finite value loss {vloss}")
        grad = nn.backward(agent.value, obs, (2.0 / resid.size) * resid[:, None], cache)
        agent.value, agent.value_opt = nn.adam_step(agent.value, grad, agent.value_opt, config.value_lr)
    stats["value_loss"] = vloss
    return stats


def auto_reward_scale(instance: Instance, seed: int = 0, count: int = 200) -> float:
    S = sample_demand(instance.demand_model, seed, count)
    mean_full = float(np.mean(profits(instance, S, np.ones(instance.shape))))
    return 1.0 / max(1e-12, abs(mean_full)) if mean_full != 0 else 1.0


class Evaluator:
    """Scores networks on a fixed SampleSet, memoized per network."""

    def __init__(self, instance: Instance, samples: SampleSet):
        self.instance = instance
        self.samples = samples
        self._cache: dict[bytes, float] = {}

    def __call__(self, F: np.ndarray) -> float:
        key = np.asarray(F, dtype=np.int8).tobytes()
        if key not in self._cache:
            net = np.asarray(F, dtype=float).reshape(self.instance.shape)
            self._cache[key] = fdp_objective_estimate(self.instance, net, self.samples)
        return self._cache[key]


def run_epoch(agent: Agent, instance: Instance, mdp: MdpConfig, config: PpoConfig, rng, scale: float) -> tuple[Trajectory, dict]:
    traj = collect(agent, instance, mdp, config.episodes_per_epoch, rng)
    finish_trajectory(traj, config.gamma, config.lam, scale)
    stats = ppo_update(agent, traj, config)
    stats["mean_return"] = float(traj.rewards.sum(axis=1).mean())
    return traj, stats


def _frequent_networks(finals: np.ndarray, count: int) -> np.ndarray:
    """The ``count`` most frequent rows of ``finals``; ties go to the first seen."""
    uniq, first, counts = np.unique(finals, axis=0, return_index=True, return_counts=True)
    order = np.lexsort((first, -counts))[:count]
    return uniq[order]


def train(
    instance: Instance,
    mdp_config: MdpConfig,
    ppo_config: PpoConfig,
    init: Agent | None = None,
    evaluator: Evaluator | None = None,
) -> tuple[nn.MlpParams, nn.MlpParams, TrainReport]:
    """Train from scratch (or from ``init``) until ``max_steps`` or early stop.

    Each epoch scores the argmax-decoded design and the most frequent final
    networks of the batch on the evaluation set; the report's eval_profit is
    the best of these and early stopping tracks its running maximum.
    """
    policy, value, report, _ = train_agent(instance, mdp_config, ppo_config, init, evaluator)
    return policy, value, report


def train_agent(instance, mdp_config, ppo_config, init=None, evaluator=None):
    cfg = ppo_config
    if mdp_config.horizon != instance.budget:
        raise ValueError("MDP horizon must equal the instance budget")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    agent = init.copy() if init is not None else init_agent(instance, mdp_config.action_set, cfg, rng)
    scale = cfg.reward_scale if cfg.reward_scale is not None else auto_reward_scale(instance)
    if evaluator is None:
        evaluator = Evaluator(instance, sample_demand(instance.demand_model, cfg.eval_seed, cfg.eval_samples))
    report = TrainReport()
    t0 = time.perf_counter()
    steps_per_epoch = cfg.episodes_per_epoch * mdp_config.horizon

    def evaluate(step, epoch, stats, batch=None):
        cands = [rollout_networks(agent.policy, instance, mdp_config, None, 1)[0]]
        if batch is not None and cfg.eval_candidates > 0:
            cands.extend(_frequent_networks(batch, cfg.eval_candidates))
        scores = [evaluator(F) for F in cands]
        k = int(np.argmax(scores))
        F, score = cands[k], scores[k]
        improved = _improves(score, report.best_eval)
        if improved:
            report.best_eval = score
            report.best_network = FlexNetwork(F.reshape(instance.shape).astype(np.int8))
        report.add(
            step=step,
            epoch=epoch,
            mean_return=stats.get("mean_return", ""),
            value_loss=stats.get("value_loss", ""),
            approx_kl=stats.get("approx_kl", ""),
            clip_frac=stats.get("clip_frac", ""),
            eval_profit=score,
            wallclock_s=round(time.perf_counter() - t0, 3) if cfg.record_wallclock else "",
        )
        return improved

    evaluate(0, 0, {})
    step = 0
    epoch = 0
    last_improve = 0
    while step + steps_per_epoch <= cfg.max_steps and (cfg.max_epochs is None or epoch < cfg.max_epochs):
        traj, stats = run_epoch(agent, instance, mdp_config, cfg, rng, scale)
        step += steps_per_epoch
        epoch += 1
        if evaluate(step, epoch, stats, traj.final_networks):
            last_improve = step
        log.info("epoch %d step %d return %.6g eval %.6g", epoch, step, stats["mean_return"], report.rows[-1]["eval_profit"])
        if step - last_improve >= cfg.early_stop_steps:
            report.stopped_early = True
            break
    report.total_steps = step
    return agent.policy, agent.value, report, agent


@dataclass
class Extraction:
    best: FlexNetwork
    best_score: float
    candidates: list  # [(FlexNetwork, score)] in first-seen order


def extract_designs(
    policy: nn.MlpParams,
    instance: Instance,
    mdp_config: MdpConfig,
    count: int = 50,
    eval_samples: SampleSet | int = 5000,
    seed: int = 0,
) -> Extraction:
    """Sample ``count`` stochastic rollouts, dedupe, score on one shared SampleSet."""
    if isinstance(eval_samples, int):
        eval_samples = sample_demand(instance.demand_model, EVAL_SEED, eval_samples)
    rng = np.random.Generator(np.random.PCG64(seed))
    finals = rollout_networks(policy, instance, mdp_config, rng, count)
    return score_candidates(instance, finals, eval_samples)


def score_candidates(instance: Instance, finals, samples: SampleSet) -> Extraction:
    seen: dict[bytes, int] = {}
    nets = []
    for F in finals:
        F = np.asarray(F).reshape(instance.shape).astype(np.int8)
        key = F.tobytes()
        if key not in seen:
            seen[key] = len(nets)
            nets.append(FlexNetwork(F))
    scores = [fdp_objective_estimate(instance, net, samples) for net in nets]
    k = int(np.argmax(scores))
    return Extraction(nets[k], float(scores[k]), list(zip(nets, scores)))


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    d.pop("samples", None)
    return d
