import itertools
from dataclasses import replace

import numpy as np
import pytest

from conftest import flat_trace, make_task
from vec_offload.baselines import local_execution_total
from vec_offload.energy import local_energy, local_marginal_cost
from vec_offload.errors import InfeasibleAllocation, InfeasiblePlanError
from vec_offload.harness import build_tasks, point_config
from vec_offload.models import ExperimentSpec, ScenarioConfig, SolverConfig
from vec_offload.scenario import generate_channel_trace
from vec_offload.solver import (
    DualState,
    LagrangianIterate,
    _converged,
    PrimalPlan,
    capacity_limits,
    certificate_bound,
    certificate_duals,
    channel_greedy_schedule,
    dual_value,
    evaluate_total_energy,
    lagrangian_iterate,
    mirrored_downlink,
    optimal_offload_ratio,
    optimal_schedule,
    relaxed_minimiser,
    round_robin_schedule,
    run_algorithm1,
    solve_bit_allocation,
    time_share_schedule,
    update_duals,
)

# frames 1..5: strong uplink in frame 3, almost no downlink in frame 5
STAIRCASE_GAINS = [1e-6, 5e-7, 4e-6, 2e-6, 1e-9]


def slot_energy(bits, gains, cfg):
    return cfg.noise_power * cfg.frame_duration / gains * (np.exp2(bits / cfg.slot_bits) - 1.0)


def delivered(uplink, down_caps, kappa):
    """Output bits delivered by the last slot when downloading as early as possible"""
    done = np.zeros(np.broadcast(*uplink).shape)
    uploaded = np.zeros_like(done)
    for bits, cap in zip(uplink, down_caps):
        uploaded = uploaded + bits
        done = np.minimum(kappa * uploaded, done + cap)
    return done


def grid_minimum(gains, up_caps, down_caps, totals, kappa, cfg, points=61):
    """
    Smallest uplink energy per requested total over three slots: a grid on all
    but the last usable slot, the remainder in the last one.
    """
    totals = np.asarray(totals, dtype=float)[:, None, None]
    used = np.flatnonzero(up_caps > 0)
    bits = [np.zeros((1, 1, 1)) for _ in range(3)]
    shapes = [(1, points, 1), (1, 1, points)]
    for i, shape in zip(used[:-1], shapes):
        bits[i] = np.linspace(0.0, up_caps[i], points).reshape(shape)

    if used.size == 0:
        ok = totals == 0
    else:
        last = used[-1]
        bits[last] = totals - sum(bits[i] for i in used[:-1])
        ok = (bits[last] >= 0) & (bits[last] <= up_caps[last] * (1 + 1e-12))
        bits[last] = np.clip(bits[last], 0.0, None)
    ok = ok & (delivered(bits, down_caps, kappa) >= kappa * totals * (1 - 1e-12))

    energy = sum(slot_energy(bits[i], gains[i], cfg) for i in used)
    energy = np.broadcast_to(np.where(ok, energy, np.inf), np.broadcast(ok, *bits).shape)
    return energy.reshape(energy.shape[0], -1).min(axis=1)


@pytest.fixture
def staircase(five_frames):
    trace = flat_trace(five_frames, [STAIRCASE_GAINS])
    return five_frames, [make_task(input_bits=3e6)], trace


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("fraction,expected", [(0.25, 0.5), (1.0, 0.0), (0.0, 1.0), (-1.0, 1.0), (2.0, 0.0)])
def test_offload_ratio_closed_form(fraction, expected):
    task = make_task(input_bits=1e6)
    marginal = local_marginal_cost(1e6, task.cycles_per_bit, task.switched_capacitance, 1.0)
    duals = replace(DualState.zeros(1, 3), u_u=np.array([fraction * marginal]))
    assert optimal_offload_ratio(duals, task, 1.0, 0) == pytest.approx(expected)


def test_offload_ratio_is_stationary():
    task = make_task(input_bits=1e6)
    T = 1.0
    marginal = local_marginal_cost(1e6, task.cycles_per_bit, task.switched_capacitance, T)
    weight = 0.3 * marginal
    duals = replace(DualState.zeros(1, 3), u_c=np.array([weight]))
    rho = optimal_offload_ratio(duals, task, T, 0)

    def f(r):
        return local_energy((1 - r) * 1e6, task.cycles_per_bit, task.switched_capacitance, T) + weight * r * 1e6

    h = 1e-6
    assert abs((f(rho + h) - f(rho - h)) / (2 * h)) <= 1e-8 * 1e6 * marginal


def test_schedule_picks_lowest_score(five_frames):
    trace = flat_trace(five_frames, np.full((2, 5), 1e-6))
    duals = replace(DualState.zeros(2, 3), lam_u=np.array([[1.0] * 3, [2.0] * 3]))
    a_u, a_d = optimal_schedule(duals, np.zeros((2, 3)), trace, five_frames)
    np.testing.assert_array_equal(a_u, [[0, 0, 0], [1, 1, 1]])
    np.testing.assert_array_equal(a_d.sum(axis=0), 1)


def test_schedule_ties_go_to_lowest_index(five_frames):
    trace = flat_trace(five_frames, np.full((3, 5), 1e-6))
    a_u, a_d = optimal_schedule(DualState.zeros(3, 3), np.zeros((3, 3)), trace, five_frames)
    np.testing.assert_array_equal(a_u[0], 1)
    np.testing.assert_array_equal(a_d[0], 1)


def test_schedule_ties_can_go_to_highest_index(five_frames):
    trace = flat_trace(five_frames, np.full((3, 5), 1e-6))
    a_u, a_d = optimal_schedule(
        DualState.zeros(3, 3), np.zeros((3, 3)), trace, five_frames, tie_break="highest_index"
    )
    np.testing.assert_array_equal(a_u[2], 1)
    np.testing.assert_array_equal(a_d[2], 1)


def test_unusable_slot_goes_to_last_vehicle_with_highest_index(five_frames):
    active = np.array([[False] * 5, [False] * 5])
    trace = flat_trace(five_frames, np.full((2, 5), 1e-6), active)
    a_u, _ = optimal_schedule(DualState.zeros(2, 3), np.zeros((2, 3)), trace, five_frames, "highest_index")
    np.testing.assert_array_equal(a_u, [[0, 0, 0], [1, 1, 1]])


def test_schedule_invariant_to_common_scaling(five_frames):
    rng = np.random.default_rng(3)
    trace = flat_trace(five_frames, rng.uniform(1e-7, 1e-6, (3, 5)))
    lam = rng.uniform(0.1, 2.0, (3, 3))
    a, _ = optimal_schedule(replace(DualState.zeros(3, 3), lam_u=lam), np.zeros((3, 3)), trace, five_frames)
    b, _ = optimal_schedule(replace(DualState.zeros(3, 3), lam_u=7 * lam), np.zeros((3, 3)), trace, five_frames)
    np.testing.assert_array_equal(a, b)


def test_schedule_skips_absent_vehicles(five_frames):
    active = np.array([[True] * 5, [False, False, True, True, True]])
    trace = flat_trace(five_frames, [[1e-7] * 5, [1e-5] * 5], active)
    duals = replace(DualState.zeros(2, 3), lam_u=np.ones((2, 3)))
    a_u, _ = optimal_schedule(duals, np.zeros((2, 3)), trace, five_frames)
    np.testing.assert_array_equal(a_u, [[1, 1, 0], [0, 0, 1]])


def test_single_vehicle_owns_every_frame(five_frames):
    trace = flat_trace(five_frames, np.full((1, 5), 1e-6))
    a_u, a_d = optimal_schedule(DualState.zeros(1, 3), np.zeros((1, 3)), trace, five_frames)
    np.testing.assert_array_equal(a_u, 1)
    np.testing.assert_array_equal(a_d, 1)


# ---------------------------------------------------------------------------
# Multiplier updates
# ---------------------------------------------------------------------------


def _iterate(K, S, **arrays):
    fields = {"rho": np.zeros(K), "a_u": np.zeros((K, S)), "a_d": np.zeros((K, S))}
    fields.update({name: np.zeros((K, S)) for name in ("l_u", "l_c", "l_d")})
    fields.update(arrays)
    return LagrangianIterate(**fields)


def test_zero_residuals_keep_multipliers(five_frames):
    trace = flat_trace(five_frames, np.zeros((1, 5)))
    duals = replace(DualState.zeros(1, 3), lam_u=np.full((1, 3), 0.2), u_c=np.array([1.5]))
    updated = update_duals(duals, _iterate(1, 3), trace, [make_task()], five_frames)
    np.testing.assert_array_equal(updated.lam_u, duals.lam_u)
    np.testing.assert_array_equal(updated.u_c, duals.u_c)
    assert updated.iteration == duals.iteration + 1


def test_violated_rate_raises_multiplier(five_frames):
    trace = flat_trace(five_frames, np.zeros((1, 5)))
    duals = DualState.zeros(1, 3, steps=(0.5,) * 7)
    l_u = np.array([[2 * five_frames.slot_bits, 0.0, 0.0]])
    updated = update_duals(duals, _iterate(1, 3, l_u=l_u), trace, [make_task()], five_frames)
    assert updated.lam_u[0, 0] == pytest.approx(1.0)
    np.testing.assert_array_equal(updated.lam_u[0, 1:], 0.0)


def test_slack_rate_projects_to_zero(five_frames):
    unit_gain = five_frames.noise_power / five_frames.vehicle_max_power
    trace = flat_trace(five_frames, np.full((1, 5), unit_gain))
    assert trace.uplink_slot_caps[0, 0] == pytest.approx(five_frames.slot_bits)
    duals = replace(DualState.zeros(1, 3), lam_u=np.full((1, 3), 0.1))
    updated = update_duals(duals, _iterate(1, 3, a_u=np.ones((1, 3))), trace, [make_task()], five_frames)
    np.testing.assert_array_equal(updated.lam_u, 0.0)


def test_polyak_step_reaches_for_the_target(pair):
    cfg, tasks, trace = pair
    duals = DualState.zeros(2, cfg.num_slots, decay="polyak")
    relaxed, dual = relaxed_minimiser(duals, trace, tasks, cfg)
    assert dual == pytest.approx(0.0, abs=1e-12)

    near = update_duals(duals, relaxed, trace, tasks, cfg, dual=dual, target=1.0)
    far = update_duals(duals, relaxed, trace, tasks, cfg, dual=dual, target=2.0)
    assert np.all(near.u_u > 0.0)
    np.testing.assert_allclose(far.u_u, 2.0 * near.u_u, rtol=1e-12)
    # residuals pushing a zero multiplier below zero leave it there
    np.testing.assert_array_equal(near.lam_u, 0.0)
    np.testing.assert_array_equal(near.lam_d, 0.0)


def test_polyak_step_stands_still_at_the_target(pair):
    cfg, tasks, trace = pair
    duals = replace(DualState.zeros(2, cfg.num_slots, decay="polyak"), u_c=np.array([1e-9, 2e-9]))
    relaxed, dual = relaxed_minimiser(duals, trace, tasks, cfg)
    for target in (dual, dual - 1.0, None):
        updated = update_duals(duals, relaxed, trace, tasks, cfg, dual=dual, target=target)
        np.testing.assert_array_equal(updated.u_c, duals.u_c)
        np.testing.assert_array_equal(updated.u_u, duals.u_u)


def test_polyak_agility_scales_the_step(pair):
    cfg, tasks, trace = pair
    duals = DualState.zeros(2, cfg.num_slots, decay="polyak")
    relaxed, dual = relaxed_minimiser(duals, trace, tasks, cfg)
    full = update_duals(duals, relaxed, trace, tasks, cfg, dual=dual, target=1.0)
    half = update_duals(replace(duals, agility=0.5), relaxed, trace, tasks, cfg, dual=dual, target=1.0)
    np.testing.assert_allclose(half.u_u, 0.5 * full.u_u, rtol=1e-12)


def test_steps_decay():
    duals = DualState.zeros(1, 3, steps=(1.0,) * 7, decay="sqrt")
    assert duals.steps[0] == 1.0
    cfg = ScenarioConfig(mission_time=0.15, fading=False)
    trace = flat_trace(cfg, np.zeros((1, 5)))
    updated = update_duals(duals, _iterate(1, 3), trace, [make_task()], cfg)
    assert updated.steps[0] == pytest.approx(1 / np.sqrt(2))


# ---------------------------------------------------------------------------
# Bit allocation
# ---------------------------------------------------------------------------


def test_no_offload_sends_nothing(staircase):
    cfg, tasks, trace = staircase
    allocation = solve_bit_allocation(np.ones((1, 3)), np.ones((1, 3)), np.zeros(1), trace, tasks, cfg)
    assert allocation.objective == 0.0
    np.testing.assert_array_equal(allocation.l_u, 0.0)


def test_two_equal_frames_share_evenly(five_frames):
    trace = flat_trace(five_frames, np.full((1, 5), 1e-6))
    a_u = np.array([[1, 0, 1]])
    allocation = solve_bit_allocation(a_u, np.ones((1, 3)), np.ones(1), trace, [make_task(input_bits=2e6)], five_frames)
    np.testing.assert_allclose(allocation.l_u, [[1e6, 0.0, 1e6]], rtol=1e-9)


def test_bit_allocation_matches_grid_oracle(staircase):
    cfg, tasks, trace = staircase
    allocation = solve_bit_allocation(np.ones((1, 3)), np.ones((1, 3)), np.ones(1), trace, tasks, cfg)
    oracle = grid_minimum(
        np.array(STAIRCASE_GAINS[:3]), trace.uplink_slot_caps[0], trace.downlink_slot_caps[0], [3e6], 0.5, cfg,
        points=401,
    )[0]
    assert allocation.objective <= oracle * (1 + 1e-9)
    assert oracle <= allocation.objective * 1.005
    assert allocation.kkt_residual <= 1e-6


@pytest.mark.parametrize("seed", range(50))
def test_random_bit_allocations_match_grid_oracle(five_frames, seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    trace = flat_trace(five_frames, 10 ** rng.uniform(-7.0, -5.0, (K, 5)))
    tasks = [make_task(k, input_bits=float(rng.uniform(5e5, 3e6))) for k in range(K)]
    a_u = np.zeros((K, 3), dtype=np.int8)
    a_u[rng.integers(K, size=3), np.arange(3)] = 1
    a_d = mirrored_downlink(a_u)
    rho = rng.uniform(0.3, 0.95, K) * capacity_limits(a_u, a_d, trace, tasks)

    allocation = solve_bit_allocation(a_u, a_d, rho, trace, tasks, five_frames)
    assert allocation.kkt_residual <= 1e-6
    oracle = sum(
        grid_minimum(
            trace.uplink_slot_gains[k], a_u[k] * trace.uplink_slot_caps[k], a_d[k] * trace.downlink_slot_caps[k],
            [rho[k] * tasks[k].input_bits], 0.5, five_frames, points=401,
        )[0]
        for k in range(K)
        if rho[k] > 0
    )
    assert allocation.objective <= oracle * (1 + 1e-7)
    assert oracle <= allocation.objective * 1.005


def test_staircase_plan_is_feasible(staircase):
    cfg, tasks, trace = staircase
    allocation = solve_bit_allocation(np.ones((1, 3)), np.ones((1, 3)), np.ones(1), trace, tasks, cfg)
    # the tiny downlink in frame 5 forces almost everything into the first two slots
    assert allocation.l_u[0, :2].sum() >= (3e6 - 2 * trace.downlink_slot_caps[0, 2]) * (1 - 1e-12)
    plan = PrimalPlan.from_slots(
        allocation.l_u, allocation.l_c, allocation.l_d, np.ones((1, 3)), np.ones((1, 3)), np.ones(1)
    )
    assert max(plan.feasibility_residuals(trace, tasks, cfg).values()) <= 1e-9


def test_overfull_schedule_raises(staircase):
    cfg, tasks, trace = staircase
    with pytest.raises(InfeasibleAllocation):
        solve_bit_allocation(np.array([[1, 0, 0]]), np.ones((1, 3)), np.ones(1), trace, tasks, cfg)


def test_capacity_limits(staircase):
    cfg, tasks, trace = staircase
    assert capacity_limits(np.ones((1, 3)), np.ones((1, 3)), trace, tasks)[0] == 1.0
    assert capacity_limits(np.zeros((1, 3)), np.ones((1, 3)), trace, tasks)[0] == 0.0


def test_stronger_channel_never_costs_more(five_frames):
    rng = np.random.default_rng(8)
    gains = rng.uniform(5e-7, 5e-6, (2, 5))
    tasks = [make_task(0, input_bits=1e6), make_task(1, input_bits=8e5)]
    a_u = np.array([[1, 0, 1], [0, 1, 0]])
    rho = np.array([0.9, 0.7])
    trace = flat_trace(five_frames, gains)
    weak = solve_bit_allocation(a_u, a_u, rho, trace, tasks, five_frames)
    strong = solve_bit_allocation(a_u, a_u, rho, trace.scaled(2.0, five_frames), tasks, five_frames)
    assert strong.objective <= weak.objective


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_round_robin_skips_absent_vehicles():
    active = np.array([[True, True, True, True], [False, False, True, True]])
    np.testing.assert_array_equal(round_robin_schedule(active), [[1, 1, 0, 1], [0, 0, 1, 0]])


def test_round_robin_gives_unusable_frames_to_first_vehicle():
    active = np.array([[False, True], [False, True]])
    np.testing.assert_array_equal(round_robin_schedule(active), [[1, 1], [0, 0]])


def test_channel_greedy_is_exclusive():
    caps = np.array([[1.0, 4.0, 2.0], [3.0, 3.0, 3.0]])
    a = channel_greedy_schedule(caps, np.ones_like(caps, dtype=bool))
    np.testing.assert_array_equal(a.sum(axis=0), 1)
    np.testing.assert_array_equal(a[0], [0, 1, 0])


def test_mirrored_downlink_is_a_copy():
    a = np.array([[1, 0], [0, 1]], dtype=np.int8)
    b = mirrored_downlink(a)
    b[0, 0] = 0
    assert a[0, 0] == 1


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


def test_local_plan_costs_local_energy(five_frames):
    trace = flat_trace(five_frames, np.full((2, 5), 1e-6))
    tasks = [make_task(0), make_task(1, input_bits=2e6)]
    a = round_robin_schedule(trace.uplink_slot_active)
    plan = PrimalPlan.from_slots(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), a, a, np.zeros(2))
    breakdown = evaluate_total_energy(plan, trace, tasks, five_frames)
    expected = [local_energy(t.input_bits, t.cycles_per_bit, t.switched_capacitance, 0.15) for t in tasks]
    np.testing.assert_allclose(breakdown.per_vehicle, expected)
    np.testing.assert_array_equal(breakdown.comm_energy, 0.0)


def test_plan_over_cap_is_rejected(five_frames):
    trace = flat_trace(five_frames, np.full((1, 5), 1e-6))
    cap = trace.uplink_slot_caps[0, 0]
    uplink = np.array([[2 * cap, 0.0, 0.0]])
    plan = PrimalPlan.from_slots(uplink, uplink, 0.5 * uplink, np.ones((1, 3)), np.ones((1, 3)), [2 * cap / 1e6])
    with pytest.raises(InfeasiblePlanError) as excinfo:
        evaluate_total_energy(plan, trace, [make_task()], five_frames)
    assert excinfo.value.family == "uplink_rate"


def test_shared_frame_is_rejected(five_frames):
    trace = flat_trace(five_frames, np.full((2, 5), 1e-6))
    a = np.ones((2, 3), dtype=np.int8)
    plan = PrimalPlan.from_slots(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), a, a, np.zeros(2))
    with pytest.raises(InfeasiblePlanError) as excinfo:
        plan.check_feasible(trace, [make_task(0), make_task(1)], five_frames)
    assert excinfo.value.family == "exclusivity"


def test_plan_frames_are_shifted():
    plan = PrimalPlan.from_slots(
        np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), np.array([[0.5, 1.0]]),
        np.array([[1, 1]]), np.array([[1, 1]]), [1.0],
    )
    np.testing.assert_array_equal(plan.l_u, [[1.0, 2.0, 0.0, 0.0]])
    np.testing.assert_array_equal(plan.l_c, [[0.0, 1.0, 2.0, 0.0]])
    np.testing.assert_array_equal(plan.l_d, [[0.0, 0.0, 0.5, 1.0]])


# ---------------------------------------------------------------------------
# Dual ascent and recovery
# ---------------------------------------------------------------------------


@pytest.fixture
def pair():
    """Two vehicles close to the first RSU, five frames, no fading"""
    cfg = ScenarioConfig(mission_time=0.15, rsu_radius=10.0, fading=False)
    tasks = [make_task(0, lane=1), make_task(1, lane=2)]
    return cfg, tasks, generate_channel_trace(cfg, tasks)


def test_poor_channel_keeps_work_on_board(five_frames):
    trace = flat_trace(five_frames, np.full((1, 5), 1e-14))
    tasks = [make_task()]
    report = run_algorithm1(five_frames, tasks, trace)
    local = local_energy(1e6, 1550.7, 1e-28, 0.15)
    assert report.plan.rho[0] <= 1e-6
    assert report.primal_value == pytest.approx(local, rel=1e-5)
    assert report.primal_value <= local


def test_cheap_channel_offloads_almost_everything(five_frames):
    trace = flat_trace(five_frames, np.full((1, 5), 1e-5))
    report = run_algorithm1(five_frames, [make_task()], trace)
    assert report.plan.rho[0] >= 0.99


def test_single_vehicle_gap_is_small():
    cfg = ScenarioConfig(mission_time=0.3, rsu_radius=10.0, fading=False)
    tasks = [make_task(input_bits=4e6)]
    report = run_algorithm1(cfg, tasks, generate_channel_trace(cfg, tasks))
    assert 0.0 < report.plan.rho[0] < 1.0
    assert report.gap <= 0.1 * report.primal_value
    assert report.dual_bound <= report.primal_value * (1 + 1e-9)


def test_recovered_plan_is_feasible(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)
    assert set(report.feasibility_residuals) >= {"uplink_rate", "downlink_precedence", "exclusivity"}
    assert max(report.feasibility_residuals.values()) <= 1e-9
    report.plan.check_feasible(trace, tasks, cfg)


def test_recovery_never_worse_than_local(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)
    local = sum(local_energy(t.input_bits, t.cycles_per_bit, t.switched_capacitance, 0.15) for t in tasks)
    assert report.primal_value <= local
    np.testing.assert_allclose(report.breakdown.per_vehicle.sum(), report.primal_value)


def test_dual_values_bound_the_recovered_plan(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)
    assert len(report.dual_history) == report.iterations_used
    assert report.iterations_used <= SolverConfig().max_iterations
    assert max(report.dual_history) <= report.primal_value * (1 + 1e-9)
    assert report.gap >= -1e-9 * report.primal_value


@pytest.mark.parametrize("seed", range(5))
def test_weak_duality_for_any_multipliers(pair, seed):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)
    rng = np.random.default_rng(seed)
    K, S = 2, cfg.num_slots
    scale = local_marginal_cost(1e6, 1550.7, 1e-28, cfg.mission_time)
    duals = replace(
        DualState.zeros(K, S),
        lam_u=rng.exponential(cfg.slot_bits * scale, (K, S)),
        lam_d=rng.exponential(cfg.slot_bits * scale, (K, S)),
        mu_u=rng.exponential(scale, (K, S)),
        mu_d=rng.exponential(scale, (K, S)),
        u_u=rng.normal(0.0, scale, K),
        u_c=rng.normal(0.0, scale, K),
        u_d=rng.normal(0.0, scale, K),
    )
    assert dual_value(duals, trace, tasks, cfg) <= report.primal_value * (1 + 1e-9)


def test_matches_exhaustive_oracle(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)

    rhos = np.linspace(0.0, 1.0, 101)
    L = tasks[0].input_bits
    local = local_energy((1 - rhos) * L, 1550.7, 1e-28, cfg.mission_time)
    best = {}
    for k in range(2):
        for up, down in itertools.product(itertools.product((0, 1), repeat=3), repeat=2):
            comm = grid_minimum(
                trace.uplink_slot_gains[k],
                np.array(up) * trace.uplink_slot_caps[k],
                np.array(down) * trace.downlink_slot_caps[k],
                rhos * L, 0.5, cfg,
            )
            best[k, up, down] = np.min(comm + local)

    oracle = min(
        best[0, up, down] + best[1, tuple(1 - np.array(up)), tuple(1 - np.array(down))]
        for up, down in itertools.product(itertools.product((0, 1), repeat=3), repeat=2)
    )
    assert report.primal_value <= oracle * 1.05
    assert report.primal_value >= oracle * 0.99


def test_stronger_channel_never_costs_more_single_vehicle(five_frames):
    tasks = [make_task(input_bits=3e6)]
    trace = flat_trace(five_frames, [STAIRCASE_GAINS])
    weak = run_algorithm1(five_frames, tasks, trace)
    strong = run_algorithm1(five_frames, tasks, trace.scaled(2.0, five_frames))
    assert strong.primal_value <= weak.primal_value * (1 + 1e-9)


def test_runs_are_deterministic(pair):
    cfg, tasks, trace = pair
    first = run_algorithm1(cfg, tasks, trace)
    second = run_algorithm1(cfg, tasks, trace)
    np.testing.assert_array_equal(first.plan.l_u, second.plan.l_u)
    np.testing.assert_array_equal(first.plan.a_u, second.plan.a_u)
    assert first.dual_history == second.dual_history
    assert first.primal_value == second.primal_value


def test_zero_multipliers_relax_everything(pair):
    cfg, tasks, trace = pair
    duals = DualState.zeros(2, cfg.num_slots)
    a_u = round_robin_schedule(trace.uplink_slot_active)
    iterate = lagrangian_iterate(duals, a_u, mirrored_downlink(a_u), trace, tasks, cfg)
    np.testing.assert_array_equal(iterate.rho, 1.0)
    for bits in (iterate.l_u, iterate.l_c, iterate.l_d):
        np.testing.assert_array_equal(bits, 0.0)
    assert dual_value(duals, trace, tasks, cfg) == pytest.approx(0.0, abs=1e-12)


def test_uplink_price_fills_scheduled_slots(pair):
    cfg, tasks, trace = pair
    scale = local_marginal_cost(1e6, 1550.7, 1e-28, cfg.mission_time)
    duals = replace(DualState.zeros(2, cfg.num_slots), u_u=np.full(2, scale))
    a_u = round_robin_schedule(trace.uplink_slot_active)
    iterate = lagrangian_iterate(duals, a_u, mirrored_downlink(a_u), trace, tasks, cfg)
    caps = trace.uplink_slot_caps
    assert np.all(iterate.l_u >= 0.0)
    assert np.all(iterate.l_u <= caps + 1e-9)
    assert np.all(iterate.l_u[(a_u == 1) & (caps > 0)] > 0.0)


def test_certificate_bound_is_valid_and_reported(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)
    bound = certificate_bound(report.plan.rho, trace, tasks, cfg)
    implied = dual_value(certificate_duals(report.plan.rho, tasks, cfg), trace, tasks, cfg)
    assert bound >= implied - 1e-12 * abs(implied)
    assert bound <= report.primal_value * (1 + 1e-9)
    assert report.dual_bound >= bound - 1e-9 * abs(bound)


def test_relaxed_minimiser_only_owners_upload(pair):
    cfg, tasks, trace = pair
    scale = local_marginal_cost(1e6, 1550.7, 1e-28, cfg.mission_time)
    duals = replace(DualState.zeros(2, cfg.num_slots), u_u=np.array([scale, 0.5 * scale]))
    relaxed, value = relaxed_minimiser(duals, trace, tasks, cfg)
    np.testing.assert_array_equal(relaxed.a_u.sum(axis=0), 1)
    np.testing.assert_array_equal(relaxed.l_u[relaxed.a_u == 0], 0.0)
    assert np.all(relaxed.l_u <= trace.uplink_slot_caps + 1e-9)
    assert value == dual_value(duals, trace, tasks, cfg)


def test_dual_ascent_closes_the_gap(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace)
    assert max(report.dual_history) > 0.0
    assert max(report.dual_history) > report.dual_history[0]
    assert report.gap <= 0.1 * report.primal_value


def test_best_dual_never_decreases_over_a_long_run(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace, SolverConfig(min_iterations=200, max_iterations=200))
    assert report.iterations_used == 200
    best = np.maximum.accumulate(report.dual_history)
    assert np.all(np.diff(best) >= 0.0)
    assert best[-1] > best[0]
    assert best[-1] <= report.primal_value * (1 + 1e-9)


def test_highest_index_tie_break_still_solves(pair):
    cfg, tasks, trace = pair
    report = run_algorithm1(cfg, tasks, trace, SolverConfig(tie_break="highest_index"))
    report.plan.check_feasible(trace, tasks, cfg)
    assert report.gap <= 0.1 * report.primal_value


def test_time_share_schedule_is_exclusive(pair):
    cfg, tasks, trace = pair
    a_u = time_share_schedule(trace, tasks, cfg, SolverConfig())
    np.testing.assert_array_equal(a_u.sum(axis=0), 1)
    owners = np.argmax(a_u, axis=0)
    assert all(trace.uplink_slot_active[k, i] for i, k in enumerate(owners) if trace.uplink_slot_active[:, i].any())


@pytest.mark.slow
def test_default_instance_solves():
    spec = ExperimentSpec()
    cfg, template = point_config(spec, 10.0, seed=1)
    tasks = build_tasks(template, cfg, seed=1)
    trace = generate_channel_trace(cfg, tasks)
    report = run_algorithm1(cfg, tasks, trace, spec.solver)
    report.plan.check_feasible(trace, tasks, cfg)
    assert report.primal_value < local_execution_total(tasks, cfg.mission_time).total
    assert report.dual_bound <= report.primal_value * (1 + 1e-9)


def test_flat_dual_history_never_converges():
    solver_cfg = SolverConfig(min_iterations=5, convergence_window=3)
    assert not _converged([0.0] * 50, 1.0, solver_cfg)
    assert not _converged([-1.0] * 50, 1.0, solver_cfg)
    assert _converged([0.0] + [1.0] * 10, 1.0, solver_cfg)
    assert _converged([0.0] + [0.5] * 10, 1.0, solver_cfg)
