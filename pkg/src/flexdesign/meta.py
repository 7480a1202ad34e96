"""First-order meta-learning over design tasks that differ only in the arc budget.

Each meta-epoch clones the meta-parameters for every task in the batch, runs
``adaptation_steps`` PPO epochs on that task, collects one more batch with
the adapted policy and updates on it, then moves the meta-parameters toward
the mean adapted parameters (a Reptile-style first-order step).  Adam
moments are kept per task across meta-epochs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .env import MdpConfig
from .instance import Instance, sample_demand
from .ppo import (
    Agent,
    Evaluator,
    PpoConfig,
    TrainReport,
    _improves,
    auto_reward_scale,
    init_agent,
    rollout_networks,
    run_epoch,
    train_agent,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSpec:
    instance: Instance
    k_values: tuple
    adaptation_steps: int = 1
    inner_lr: float | None = None  # overrides the PPO policy learning rate inside tasks
    meta_lr: float = 1.0
    meta_epochs: int = 100
    tasks_per_batch: int | None = None  # None: every task each meta-epoch
    convergence_patience: int | None = None  # stop after this many epochs without improvement

    def __post_init__(self):
        mn = self.instance.m * self.instance.n
        ks = tuple(int(k) for k in self.k_values)
        if not ks:
            raise ValueError("k_values must be nonempty")
        if any(k < 1 or k > mn for k in ks):
            raise ValueError(f"every K must lie in [1, {mn}]")
        object.__setattr__(self, "k_values", ks)


@dataclass
class MetaReport(TrainReport):
    task_evals: list = field(default_factory=list)  # per meta-epoch {K: eval}


def task_mdp(base: MdpConfig, k: int) -> MdpConfig:
    return replace(base, horizon=k)


def meta_update(theta: np.ndarray, adapted: list[np.ndarray], meta_lr: float) -> np.ndarray:
    if len(adapted) == 1 and meta_lr == 1.0:
        # theta + (theta_1 - theta) without the round-off
        return adapted[0].copy()
    step = np.mean([a - theta for a in adapted], axis=0)
    return theta + meta_lr * step


def meta_train(task_spec: TaskSpec, ppo_config: PpoConfig, mdp_config: MdpConfig | None = None):
    """Return ``(policy, value, MetaReport)``.

    ``mdp_config`` supplies omega, variance reduction and action set; its
    horizon is replaced per task.
    """
    spec = task_spec
    cfg = ppo_config
    base_mdp = mdp_config or MdpConfig(horizon=spec.k_values[0])
    inner_cfg = replace(cfg, policy_lr=spec.inner_lr) if spec.inner_lr is not None else cfg
    template = spec.instance
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    meta = init_agent(template, base_mdp.action_set, cfg, rng)
    scale = cfg.reward_scale if cfg.reward_scale is not None else auto_reward_scale(template)
    eval_set = sample_demand(template.demand_model, cfg.eval_seed, cfg.eval_samples)
    evaluators = {k: Evaluator(template.with_budget(k), eval_set) for k in spec.k_values}
    opt_states = {
        k: (nn.AdamState.for_params(meta.policy), nn.AdamState.for_params(meta.value)) for k in spec.k_values
    }
    p_shapes, v_shapes = meta.policy.shapes(), meta.value.shapes()
    report = MetaReport()
    step = 0
    best_epoch = 0
    for epoch in range(1, spec.meta_epochs + 1):
        if spec.tasks_per_batch is None or spec.tasks_per_batch >= len(spec.k_values):
            batch = list(spec.k_values)
        else:
            batch = [int(k) for k in rng.choice(spec.k_values, size=spec.tasks_per_batch, replace=False)]
        adapted_p, adapted_v, returns = [], [], []
        for k in batch:
            inst_k = template.with_budget(k)
            mdp_k = task_mdp(base_mdp, k)
            popt, vopt = opt_states[k]
            agent = Agent(meta.policy.copy(), meta.value.copy(), popt, vopt)
            for _ in range(spec.adaptation_steps):
                run_epoch(agent, inst_k, mdp_k, inner_cfg, rng, scale)
                step += inner_cfg.episodes_per_epoch * k
            _, stats = run_epoch(agent, inst_k, mdp_k, inner_cfg, rng, scale)
            step += inner_cfg.episodes_per_epoch * k
            returns.append(stats["mean_return"])
            opt_states[k] = (agent.policy_opt, agent.value_opt)
            adapted_p.append(nn.flatten(agent.policy))
            adapted_v.append(nn.flatten(agent.value))
        meta.policy = nn.unflatten(meta_update(nn.flatten(meta.policy), adapted_p, spec.meta_lr), p_shapes)
        meta.value = nn.unflatten(meta_update(nn.flatten(meta.value), adapted_v, spec.meta_lr), v_shapes)

        evals = {}
        for k in spec.k_values:
            F = rollout_networks(meta.policy, template.with_budget(k), task_mdp(base_mdp, k), None, 1)[0]
            evals[k] = evaluators[k](F)
        mean_eval = float(np.mean(list(evals.values())))
        report.task_evals.append(evals)
        report.add(step=step, epoch=epoch, mean_return=float(np.mean(returns)), eval_profit=mean_eval)
        if _improves(mean_eval, report.best_eval):
            report.best_eval = mean_eval
            best_epoch = epoch
        log.info("meta epoch %d step %d eval %.6g", epoch, step, mean_eval)
        if spec.convergence_patience is not None and epoch - best_epoch >= spec.convergence_patience:
            report.stopped_early = True
            break
    report.total_steps = step
    return meta.policy, meta.value, report


def adapt(
    meta_params: tuple[nn.MlpParams, nn.MlpParams],
    instance: Instance,
    target_k: int,
    ppo_config: PpoConfig,
    mdp_config: MdpConfig | None = None,
):
    """PPO on the ``target_k`` task initialized from meta-parameters.

    Returns ``(policy, value, TrainReport)``; the report's step-0 row
    evaluates the meta-initialization itself.
    """
    if not 1 <= target_k <= instance.m * instance.n:
        raise ValueError(f"target K must lie in [1, {instance.m * instance.n}]")
    inst_k = instance.with_budget(target_k)
    mdp = task_mdp(mdp_config or MdpConfig(horizon=target_k), target_k)
    policy, value = meta_params
    init = Agent.fresh(policy.copy(), value.copy())
    p, v, report, _ = train_agent(inst_k, mdp, ppo_config, init)
    return p, v, report
