"""Acceptance gate: eight end-to-end checks, each reported as one PASS/FAIL
line in the terminal summary.

The checks cover the closed-form signal formulas, gradient correctness of the
from-scratch networks, bit-level training reproducibility, an independent
brute-force replay of the queue dynamics, autoencoder capacity ordering, the
headline control result against both classical baselines, the adaptivity
correlation, and the clipped-surrogate identity.
"""

import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from tsclab.agents.autoencoder import collect_state_buffer, train_autoencoder
from tsclab.agents.ppo import PpoConfig, clipped_objective, train_ppo
from tsclab.baselines import (
    DynamicWebsterController,
    FixedTimeController,
    WebsterInput,
    webster_timings,
)
from tsclab.envs import SignalControlEnv
from tsclab.harness.config import default_flow_profile, normalizers_for_training
from tsclab.harness.metrics import correlation_report
from tsclab.harness.runner import PolicyController, run_episode
from tsclab.neural import Mlp
from tsclab.rewards import RewardSpec, queue_reward
from tsclab.sim import (
    FlowProfile,
    IntersectionLayout,
    PhasePlan,
    apply_action,
    at_decision_point,
    new_simulation,
    step,
    yellow_time,
)
from tsclab.staterep import KPlanesParams, kplanes_transform, make_observation

LAYOUT = IntersectionLayout()
PLAN = PhasePlan()


# -- check 1: closed-form formula values -----------------------------------------


def test_c1_closed_form_values():
    t0 = time.perf_counter()
    # reaction + crossing + braking, each term recomputed here by hand
    t_y = yellow_time(1.0, 12.4, 10.2, 11.11, 3.53)
    expected_y = 1.0 + (12.4 + 10.2) / 11.11 + 11.11 / (2.0 * 3.53)
    ok_yellow = (abs(t_y - 4.608) <= 1e-3
                 and abs(t_y - expected_y) <= 1e-12
                 and math.ceil(t_y) == 5)

    # 0.4 * (-20/100) + 0.6 * ((24-20)/100)
    r = queue_reward((10, 5, 0, 5), (12, 5, 2, 5))
    ok_reward = abs(r - (-0.056)) <= 1e-12

    t = webster_timings(WebsterInput(12.0, (0.3, 0.1, 0.15, 0.05)))
    # (1.5*12 + 5) / (1 - 0.6) = 57.5; proportional split of 45.5 effective
    # seconds gives (22.75, 7.58->10, 11.375, 3.79->10) after the g_min clamp
    ok_webster = (abs(t.cycle_s - 57.5) <= 1e-9
                  and t.greens_s == pytest.approx((22.75, 10.0, 11.375, 10.0),
                                                  abs=1e-9)
                  and not t.saturated)

    params = KPlanesParams(seed=0)
    state = np.zeros(19)
    state[1] = 1.0  # a valid one-hot phase
    out = kplanes_transform(params, state)
    # 4 feature groups of 16 plus the 4-way phase one-hot
    ok_planes = out.shape == (4 * 16 + 4,) and out.shape == (68,)

    elapsed = time.perf_counter() - t0
    passed = ok_yellow and ok_reward and ok_webster and ok_planes and elapsed < 4.0
    record_criterion(
        "C1 closed-form formula values",
        passed,
        f"yellow {t_y:.3f}s, reward {r:.3f}, cycle {t.cycle_s}s, "
        f"features {out.shape[0]}, {elapsed * 1000:.0f}ms",
    )
    assert ok_yellow
    assert ok_reward
    assert ok_webster
    assert ok_planes
    assert elapsed < 4.0


# -- check 2: analytic gradients vs central finite differences -------------------


def _loss(net, x, upstream):
    return float(np.asarray(upstream) @ net.predict(x))


def _kink_margin(net, x):
    """Smallest |pre-activation| over the hidden layers."""
    a = np.asarray(x, dtype=np.float64)
    margin = np.inf
    for idx in range(len(net.weights) - 1):
        z = net.weights[idx] @ a + net.biases[idx]
        margin = min(margin, float(np.min(np.abs(z))))
        a = np.maximum(z, 0.0) if net.hidden_activation == "relu" else np.tanh(z)
    return margin


def _off_kink_input(net, rng, dim):
    for _ in range(200):
        x = rng.uniform(-1.0, 1.0, size=dim)
        if _kink_margin(net, x) > 1e-3:
            return x
    raise AssertionError("could not find an input clear of relu kinks")


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-4)


def test_c2_gradients_match_finite_differences():
    t0 = time.perf_counter()
    h = 1e-5
    # the architecture families the lab actually trains: policy and value
    # heads on each observation width, plus both autoencoder halves
    families = (
        ([19, 64, 64, 3], "tanh"),
        ([8, 32, 3], "tanh"),
        ([68, 64, 3], "tanh"),
        ([19, 64, 64, 1], "tanh"),
        ([68, 32, 1], "tanh"),
        ([19, 32, 8], "relu"),
        ([8, 32, 19], "relu"),
        ([19, 32, 4], "relu"),
    )
    worst = 0.0
    checked = 0
    for i in range(100):
        sizes, act = families[i % len(families)]
        rng = np.random.Generator(np.random.PCG64(5000 + i))
        net = Mlp(sizes, act, seed=3000 + i)
        if act == "relu":
            x = _off_kink_input(net, rng, sizes[0])
        else:
            x = rng.uniform(-1.0, 1.0, size=sizes[0])
        upstream = rng.normal(size=sizes[-1])
        net.forward(x)
        grads, _ = net.backward(upstream)
        analytic = np.concatenate(
            [g.ravel() for g in net.gradient_arrays(grads)]
        )
        flat = net.get_flat()
        coords = rng.choice(flat.size, size=min(flat.size, 300), replace=False)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + h
            net.set_flat(flat)
            up = _loss(net, x, upstream)
            flat[j] = orig - h
            net.set_flat(flat)
            down = _loss(net, x, upstream)
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, _rel_err(float(analytic[j]), numeric))
            checked += 1
        net.set_flat(flat)
    elapsed = time.perf_counter() - t0
    passed = worst < 1e-4 and elapsed < 30.0
    record_criterion(
        "C2 analytic gradients vs finite differences",
        passed,
        f"100 nets, {checked} coordinates, worst rel err {worst:.2e}, "
        f"{elapsed:.1f}s",
    )
    assert worst < 1e-4
    assert elapsed < 30.0


# -- check 3: bit-level training reproducibility ---------------------------------


def test_c3_training_is_bit_reproducible():
    t0 = time.perf_counter()
    flows = default_flow_profile()
    cfg = PpoConfig(total_timesteps=20_000)
    norms = normalizers_for_training(cfg.total_timesteps, PLAN.default_cycle_s)
    reward = RewardSpec()

    def factory(seed: int) -> SignalControlEnv:
        obs = make_observation("expanded", norms)
        return SignalControlEnv(LAYOUT, PLAN, flows, obs, reward, seed)

    first = train_ppo(factory, cfg, seed=0)
    second = train_ppo(factory, cfg, seed=0)
    same_log = first.log == second.log
    same_records = first.cycle_records == second.cycle_records
    same_weights = (
        np.array_equal(first.bundle.policy.get_flat(),
                       second.bundle.policy.get_flat())
        and np.array_equal(first.bundle.value.get_flat(),
                           second.bundle.value.get_flat())
    )
    elapsed = time.perf_counter() - t0
    passed = same_log and same_records and same_weights and elapsed < 300.0
    record_criterion(
        "C3 bit-identical repeated training",
        passed,
        f"{len(first.log)} rollouts, {len(first.cycle_records)} cycles, "
        f"log={same_log} records={same_records} weights={same_weights}, "
        f"{elapsed:.1f}s",
    )
    assert same_log
    assert same_records
    assert same_weights
    assert elapsed < 300.0


# -- check 4: brute-force replay of the queue dynamics ---------------------------


class _BruteForceIntersection:
    """Independent plain-Python re-derivation of the per-tick rules.

    Phases serve opposing lane pairs in fixed rotation with 5 s yellows;
    green may end once 10 s have elapsed and control acts on a 5 s grid;
    arrivals travel 15 s to the stopline, then pass through on a flowing
    green with no queue or join the back of the queue; served queues earn
    half a vehicle of discharge credit per green second after 2 s of
    startup, and credit resets whenever the signal changes.
    """

    SERVED = ((0, 4), (1, 5), (2, 6), (3, 7))

    def __init__(self):
        self.phase = 0
        self.in_yellow = False
        self.phase_elapsed = 0
        self.yellow_elapsed = 0
        self.defaults = [20.0] * 4
        self.programmed = [20.0] * 4
        self.queues = [0] * 8
        self.transit = [[] for _ in range(8)]
        self.credit = [0.0] * 8

    def wants_decision(self):
        return (not self.in_yellow and self.phase_elapsed >= 10
                and (self.phase_elapsed - 10) % 5 == 0)

    def act(self, action):
        if action == 0:
            self.programmed[self.phase] = float(self.phase_elapsed)
        elif action == 2:
            self.programmed[self.phase] = min(
                self.programmed[self.phase] + 5.0, 40.0
            )

    def tick(self, t, arrivals):
        if self.in_yellow:
            if self.yellow_elapsed >= 5:
                self.in_yellow = False
                self.yellow_elapsed = 0
                self.phase = (self.phase + 1) % 4
                self.phase_elapsed = 0
                self.credit = [0.0] * 8
                if self.phase == 0:
                    self.programmed = list(self.defaults)
        elif self.phase_elapsed >= self.programmed[self.phase]:
            self.in_yellow = True
            self.yellow_elapsed = 0
            self.credit = [0.0] * 8

        for lane, n in enumerate(arrivals):
            self.transit[lane].extend([t + 15] * n)

        served = self.SERVED[self.phase]
        flowing = not self.in_yellow and self.phase_elapsed >= 2
        for lane in range(8):
            pending = self.transit[lane]
            while pending and pending[0] <= t:
                pending.pop(0)
                if not (flowing and lane in served and self.queues[lane] == 0):
                    self.queues[lane] += 1
        if flowing:
            for lane in served:
                self.credit[lane] += 0.5
                while self.credit[lane] >= 1.0 and self.queues[lane] > 0:
                    self.queues[lane] -= 1
                    self.credit[lane] -= 1.0

        if self.in_yellow:
            self.yellow_elapsed += 1
        else:
            self.phase_elapsed += 1


def _replay_scenario(scenario_seed):
    """Run one small random episode; None when it drew too many vehicles."""
    rng = np.random.Generator(np.random.PCG64(scenario_seed))
    rates = rng.uniform(0.0, 25.0, size=8)
    horizon = int(rng.integers(150, 301))
    flows = FlowProfile.uniform(list(rates))
    sim = new_simulation(LAYOUT, PLAN, flows, seed=scenario_seed)
    act_rng = np.random.Generator(np.random.PCG64(scenario_seed + 991))
    schedule = []
    reports = []
    for _ in range(horizon):
        if at_decision_point(sim):
            action = int(act_rng.integers(0, 3))
            apply_action(sim, action)
            schedule.append((sim.clock, action))
        reports.append(step(sim))
    if sum(sum(r.arrivals) for r in reports) > 20:
        return None

    oracle = _BruteForceIntersection()
    cursor = 0
    for report in reports:
        if oracle.wants_decision():
            assert cursor < len(schedule), "oracle saw an extra decision point"
            clock, action = schedule[cursor]
            cursor += 1
            assert clock == report.tick - 1, "decision points drifted apart"
            oracle.act(action)
        oracle.tick(report.tick, report.arrivals)
        if tuple(oracle.queues) != report.queue_lengths:
            return False
    assert cursor == len(schedule), "simulator saw an extra decision point"
    return len(reports)


def test_c4_brute_force_replay_matches():
    t0 = time.perf_counter()
    matched = 0
    ticks = 0
    candidate = 0
    while matched < 10:
        assert candidate < 100, "vehicle cap rejected too many scenarios"
        outcome = _replay_scenario(40_000 + candidate)
        candidate += 1
        if outcome is None:
            continue
        assert outcome is not False, f"scenario {candidate - 1} diverged"
        matched += 1
        ticks += outcome
    elapsed = time.perf_counter() - t0
    record_criterion(
        "C4 per-tick queues match a brute-force replay",
        True,
        f"10 scenarios, {ticks} ticks compared exactly, {elapsed:.1f}s",
    )


# -- check 5: autoencoder capacity ordering --------------------------------------


def test_c5_latent_capacity_orders_reconstruction():
    t0 = time.perf_counter()
    buffer = collect_state_buffer(10_000, default_flow_profile(), seed=123)
    wins = 0
    all_halved = True
    details = []
    for seed in range(5):
        finals = {}
        for k in (4, 8, 19):
            res = train_autoencoder(buffer, k, epochs=40, lr=1e-3, seed=seed)
            finals[k] = res.final_mse
            if res.final_mse > 0.5 * res.mse_history[0]:
                all_halved = False
        ordered = finals[19] <= finals[8] <= finals[4]
        wins += ordered
        details.append(
            f"s{seed}:{finals[4]:.3f}/{finals[8]:.3f}/{finals[19]:.3f}"
        )
    elapsed = time.perf_counter() - t0
    passed = wins >= 4 and all_halved and elapsed < 600.0
    record_criterion(
        "C5 reconstruction error orders by latent size",
        passed,
        f"ordered in {wins}/5 seeds, all runs halved epoch-0 mse: "
        f"{all_halved}, {elapsed:.0f}s [{' '.join(details)}]",
    )
    assert wins >= 4
    assert all_halved
    assert elapsed < 600.0


# -- checks 6 and 7: the headline control result ---------------------------------


@pytest.fixture(scope="module")
def control_study():
    """Five PPO seeds trained on the default scenario, each evaluated over
    five stochastic playback episodes, plus both baselines on the same
    evaluation episodes."""
    t0 = time.perf_counter()
    flows = default_flow_profile()
    cfg = PpoConfig(learning_rate=1e-3, entropy_coef=0.005, n_steps=100,
                    batch_size=50, clip_epsilon=0.1, total_timesteps=100_000)
    norms = normalizers_for_training(cfg.total_timesteps, PLAN.default_cycle_s)
    reward = RewardSpec()
    eval_seeds = (0, 1, 2, 3, 4)
    horizon = 7200

    def factory(seed: int) -> SignalControlEnv:
        obs = make_observation("expanded", norms)
        return SignalControlEnv(LAYOUT, PLAN, flows, obs, reward, seed)

    per_seed = []
    for train_seed in range(5):
        result = train_ppo(factory, cfg, train_seed)
        episodes = [
            run_episode(
                LAYOUT, PLAN, flows,
                PolicyController(result.bundle, LAYOUT,
                                 sample_seed=1000 * train_seed + s),
                seed=s, horizon_s=horizon,
            )
            for s in eval_seeds
        ]
        per_seed.append(episodes)

    baselines = {}
    for name, build in (("fixed", FixedTimeController),
                        ("webster", lambda: DynamicWebsterController(LAYOUT, PLAN))):
        scores = [
            run_episode(LAYOUT, PLAN, flows, build(), seed=s,
                        horizon_s=horizon).mean_q_cycle
            for s in eval_seeds
        ]
        baselines[name] = float(np.mean(scores))
    return {
        "per_seed": per_seed,
        "baselines": baselines,
        "elapsed_s": time.perf_counter() - t0,
    }


def test_c6_learned_control_beats_both_baselines(control_study):
    seed_scores = [
        float(np.mean([episode.mean_q_cycle for episode in episodes]))
        for episodes in control_study["per_seed"]
    ]
    learned = float(np.mean(seed_scores))
    fixed = control_study["baselines"]["fixed"]
    webster = control_study["baselines"]["webster"]
    elapsed = control_study["elapsed_s"]
    passed = (learned <= 0.9 * fixed and learned <= 0.9 * webster
              and elapsed < 7200.0)
    record_criterion(
        "C6 learned control beats both baselines by 10%",
        passed,
        f"learned {learned:.3f} vs fixed {fixed:.3f} / webster {webster:.3f}, "
        f"{elapsed:.0f}s",
    )
    assert learned <= 0.9 * fixed
    assert learned <= 0.9 * webster
    assert elapsed < 7200.0


def test_c7_green_allocation_tracks_queues(control_study):
    wins = 0
    details = []
    for episodes in control_study["per_seed"]:
        pooled = [record for episode in episodes for record in episode.records]
        report = correlation_report(pooled)
        r0 = report.green_vs_queue[0]
        r2 = report.green_vs_queue[2]
        ok = (r0 is not None and r2 is not None and r0 > 0.0 and r2 > 0.0)
        wins += ok
        details.append(
            f"{'-' if r0 is None else format(r0, '+.3f')}"
            f"/{'-' if r2 is None else format(r2, '+.3f')}"
        )
    passed = wins >= 4
    record_criterion(
        "C7 green allocation tracks queue demand",
        passed,
        f"positive on both through phases in {wins}/5 seeds "
        f"[{' '.join(details)}]",
    )
    assert wins >= 4


# -- check 8: clipped surrogate identity -----------------------------------------


def test_c8_clipped_surrogate_identity():
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(88))
    n = 10_000
    ratios = rng.uniform(0.0, 3.0, size=n)
    advantages = rng.normal(scale=2.0, size=n)
    epsilons = rng.uniform(0.05, 0.5, size=n)
    got = clipped_objective(ratios, advantages, epsilons)
    expected = np.array([
        min(r * a, min(max(r, 1.0 - e), 1.0 + e) * a)
        for r, a, e in zip(ratios, advantages, epsilons)
    ])
    identical = np.array_equal(got, expected)
    bounded = bool(np.all(got <= ratios * advantages))
    elapsed = time.perf_counter() - t0
    passed = identical and bounded and elapsed < 1.0
    record_criterion(
        "C8 clipped surrogate equals min of unclipped and clipped",
        passed,
        f"{n} random triples, exact match {identical}, never exceeds "
        f"unclipped {bounded}, {elapsed * 1000:.0f}ms",
    )
    assert identical
    assert bounded
    assert elapsed < 1.0
