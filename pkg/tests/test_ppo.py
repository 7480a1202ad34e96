import itertools

import numpy as np
import pytest

from conftest import make_instance
from flexdesign import nn
from flexdesign.env import MdpConfig
from flexdesign.instance import sample_demand
from flexdesign.oracle import fdp_objective_estimate
from flexdesign.ppo import (
    REPORT_COLUMNS,
    PpoConfig,
    TrainReport,
    clip_objective,
    clipped_surrogate,
    collect,
    compute_gae,
    compute_rewards_to_go,
    extract_designs,
    finish_trajectory,
    init_agent,
    policy_surrogate_grad,
    ppo_update,
    rollout_networks,
    train,
)

SMALL = dict(hidden_sizes=(32, 32), episodes_per_epoch=64, eval_samples=200)


def test_rewards_to_go_examples():
    assert compute_rewards_to_go([0, 0, 5], 1.0).tolist() == [5, 5, 5]
    assert compute_rewards_to_go([1, 1, 1], 0.5).tolist() == [1.75, 1.5, 1.0]
    assert compute_rewards_to_go([3, -2, 4], 0.0).tolist() == [3, -2, 4]


def test_gae_examples(rng):
    r = rng.normal(size=(4, 6))
    v = rng.normal(size=(4, 6))
    assert np.allclose(compute_gae(r, v, 1.0, 1.0), compute_rewards_to_go(r, 1.0) - v, atol=1e-12)
    assert np.allclose(compute_gae(r, np.zeros_like(r), 0.9, 1.0), compute_rewards_to_go(r, 0.9))
    assert np.allclose(compute_gae([1, 0], [0.5, 0.25], 0.5, 0.5), [0.5625, -0.25])


def test_clip_function_grid():
    assert clip_objective(0.2, 5.0) == pytest.approx(6.0)
    assert clip_objective(0.2, -5.0) == pytest.approx(-4.0)
    for eps in (0.1, 0.2, 0.3):
        for a in np.linspace(-3, 3, 13):
            expected = (1 + eps) * a if a >= 0 else (1 - eps) * a
            assert clip_objective(eps, a) == pytest.approx(expected)


def test_surrogate_at_old_policy_is_mean_advantage(rng):
    logp = rng.normal(size=50)
    adv = rng.normal(size=50)
    obj, _ = clipped_surrogate(logp, logp, adv, 0.2)
    assert abs(obj - adv.mean()) < 1e-8


def _batch(rng, inst, action_set="add_noop", episodes=16):
    cfg = PpoConfig(hidden_sizes=(8, 8), seed=1)
    agent = init_agent(inst, action_set, cfg, np.random.default_rng(0))
    mdp = MdpConfig.for_instance(inst, omega=5, action_set=action_set)
    traj = finish_trajectory(collect(agent, inst, mdp, episodes, rng), 0.99, 0.95, 0.1)
    return agent, traj


def test_surrogate_gradient_equals_policy_gradient(rng, small_stochastic):
    agent, traj = _batch(rng, small_stochastic)
    obs = traj.observations.reshape(-1, traj.observations.shape[-1])
    actions = traj.actions.ravel()
    adv = traj.advantages.ravel()
    _, grad, _, clip_frac = policy_surrogate_grad(agent.policy, obs, actions, traj.logp.ravel(), adv, 0.2)
    assert clip_frac == 0.0
    # vanilla estimator: mean of A_t * grad log pi(a_t|s_t), one sample at a time
    pg = np.zeros_like(nn.flatten(agent.policy))
    for x, a, A in zip(obs, actions, adv):
        logits = nn.forward(agent.policy, x)
        cot = -np.exp(nn.log_softmax(logits))
        cot[a] += 1.0
        pg += A * nn.flatten(nn.backward(agent.policy, x, cot))
    pg /= len(adv)
    assert np.max(np.abs(nn.flatten(grad) - pg)) < 1e-8


def test_behavior_log_probs_match_policy(rng, small_stochastic):
    agent, traj = _batch(rng, small_stochastic)
    obs = traj.observations.reshape(-1, traj.observations.shape[-1])
    logp = nn.policy_log_probs(agent.policy, obs)[np.arange(obs.shape[0]), traj.actions.ravel()]
    assert np.allclose(logp, traj.logp.ravel(), atol=1e-12)
    assert traj.rewards.shape == (16, small_stochastic.budget)


def test_kl_gate_stops_updates(rng, small_stochastic):
    agent, traj = _batch(rng, small_stochastic)
    cfg = PpoConfig(hidden_sizes=(8, 8), policy_lr=0.05, target_kl=1e-4, value_iters=1)
    kls = []
    a = agent.copy()
    stats = ppo_update(a, traj, cfg)
    assert stats["policy_iters"] < cfg.policy_iters
    # replay the same number of steps and check each one started below the target
    b = agent.copy()
    obs = traj.observations.reshape(-1, traj.observations.shape[-1])
    adv = traj.advantages.ravel()
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    for _ in range(stats["policy_iters"] + 1):
        _, grad, logp_new, _ = policy_surrogate_grad(b.policy, obs, traj.actions.ravel(), traj.logp.ravel(), adv, 0.2)
        kls.append(float(np.mean(traj.logp.ravel() - logp_new)))
        b.policy, b.policy_opt = nn.adam_step(b.policy, grad, b.policy_opt, cfg.policy_lr, maximize=True)
    assert all(k <= cfg.target_kl for k in kls[:-1])
    assert kls[-1] > cfg.target_kl


def test_bandit_update_improves_better_arc():
    inst = make_instance([1.0], [1.0, 1.0], [[1.0, 10.0]], budget=1)
    mdp = MdpConfig.for_instance(inst, omega=1, variance_reduction=False)
    cfg = PpoConfig(hidden_sizes=(16,), episodes_per_epoch=200, policy_iters=10, value_iters=10)
    rng = np.random.default_rng(3)
    agent = init_agent(inst, mdp.action_set, cfg, rng)
    obs = np.array([[0.0, 0.0, 1.0]])
    before = nn.policy_distribution(agent.policy, obs)[0, 1]
    traj = finish_trajectory(collect(agent, inst, mdp, 200, rng), cfg.gamma, cfg.lam, 0.1)
    ppo_update(agent, traj, cfg)
    assert nn.policy_distribution(agent.policy, obs)[0, 1] > before


def test_two_by_two_training_finds_optimum():
    inst = make_instance([1.0, 2.0], [2.0, 1.0], [[1.0, 3.0], [2.0, 1.0]], [[0.1, 0.5], [0.2, 0.1]], budget=2)
    mdp = MdpConfig.for_instance(inst, omega=1, variance_reduction=False)
    S = sample_demand(inst.demand_model, 0, 1)
    best = max(
        (fdp_objective_estimate(inst, np.array(F).reshape(2, 2), S), F)
        for F in itertools.product([0, 1], repeat=4) if sum(F) == 2
    )
    cfg = PpoConfig(seed=2, max_epochs=30, **SMALL)
    policy, _, report = train(inst, mdp, cfg)
    final = rollout_networks(policy, inst, mdp, None, 1)[0]
    assert tuple(final.astype(int)) == best[1]
    steps = [r["step"] for r in report.rows]
    assert steps == [2 * 64 * e for e in range(len(steps))]


def test_training_is_deterministic(small_stochastic):
    mdp = MdpConfig.for_instance(small_stochastic, omega=10)
    cfg = PpoConfig(seed=5, max_epochs=3, **SMALL)
    a = train(small_stochastic, mdp, cfg)
    b = train(small_stochastic, mdp, cfg)
    assert a[2].to_csv() == b[2].to_csv()
    assert np.array_equal(nn.flatten(a[0]), nn.flatten(b[0]))
    assert a[2].to_csv().splitlines()[0] == ",".join(REPORT_COLUMNS)


def test_early_stop_after_patience(small_stochastic):
    mdp = MdpConfig.for_instance(small_stochastic, omega=10)
    cfg = PpoConfig(seed=0, early_stop_steps=2 * 64 * 4, policy_lr=0.0, value_iters=1, eval_candidates=0, **SMALL)
    _, _, report = train(small_stochastic, mdp, cfg)
    # a frozen policy never improves on its step-0 evaluation
    assert report.stopped_early and report.total_steps == cfg.early_stop_steps
    assert report.best_eval == report.rows[0]["eval_profit"]


def test_report_monotone():
    rep = TrainReport()
    rep.add(step=5)
    with pytest.raises(ValueError):
        rep.add(step=4)


def test_extraction_contract(small_stochastic):
    inst = small_stochastic
    mdp = MdpConfig.for_instance(inst)
    agent = init_agent(inst, mdp.action_set, PpoConfig(hidden_sizes=(8,)), np.random.default_rng(0))
    S = sample_demand(inst.demand_model, 1, 300)
    ex = extract_designs(agent.policy, inst, mdp, count=20, eval_samples=S)
    assert ex.best_score == max(s for _, s in ex.candidates)
    assert len({net.arcs.tobytes() for net, _ in ex.candidates}) == len(ex.candidates)
    # a saturated policy always picks the same arcs
    sharp = agent.policy.copy()
    W, b = sharp.layers[-1]
    b[:] = 0.0
    W[:] = 0.0
    b[4] = 50.0
    ex1 = extract_designs(sharp, inst, mdp, count=50, eval_samples=S)
    assert len(ex1.candidates) == 1


def test_invalid_config():
    with pytest.raises(ValueError):
        PpoConfig(gamma=0)
    with pytest.raises(ValueError):
        PpoConfig(clip_ratio=0)


def test_frequent_networks_orders_by_count_then_first_seen():
    from flexdesign.ppo import _frequent_networks

    a, b, c = [1, 0, 0], [0, 1, 0], [0, 0, 1]
    finals = np.array([c, b, a, b, a, c, b])
    assert _frequent_networks(finals, 2).tolist() == [b, c]
    assert _frequent_networks(finals, 10).tolist() == [b, c, a]
    assert _frequent_networks(finals, 0).shape == (0, 3)
