import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from _instances import random_inputs
from hflprune.allocator import (
    AllocationInputs,
    ConvergenceError,
    allocate,
    bandwidth_given_lambda,
    baseline_equal,
    baseline_no_pruning,
    fixed_ratio_plan,
    min_pruning_ratio,
    objective,
    objective_curvature,
    objective_terms,
    oracle_allocation,
    project_simplex,
    solve_allocation,
    stationarity_residual,
)
from hflprune.model import ModelArch
from hflprune.wireless import ChannelState, DeviceProfile, device_latency


def one_device(v1=0.025, v2=5e3, v3=0.02, v4=2e4, snr=1e6, threshold=0.03):
    return AllocationInputs([v1], [v2], [v3], [v4], [snr], threshold)


def identical(n, **kw):
    base = one_device(**kw)
    return AllocationInputs(*(np.repeat(getattr(base, k), n) for k in ("v1", "v2", "v3", "v4", "snr")), base.threshold)


def test_min_pruning_ratio_examples():
    # 5 ms conv compute + 5 ms conv upload, 20 + 20 ms for the head, 30 ms budget
    assert min_pruning_ratio(one_device(), 1.0)[0] == pytest.approx(0.5, rel=1e-12)
    assert min_pruning_ratio(one_device(v1=10.0), 1.0)[0] == 0.0
    # budget already spent on the conv part
    assert min_pruning_ratio(one_device(v1=-0.001), 1.0)[0] > 1.0
    assert min_pruning_ratio(one_device(), 0.0)[0] == pytest.approx(1 + 5e3 / 2e4)
    with pytest.raises(ValueError):
        min_pruning_ratio(one_device(), 1.5)


def test_inputs_validation():
    with pytest.raises(ValueError):
        one_device(v2=0.0)
    with pytest.raises(ValueError):
        AllocationInputs([1.0, 2.0], [1.0], [1.0], [1.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        one_device(v1=np.nan)


def test_inputs_from_devices():
    arch = ModelArch(1000, ((100, 40),))
    prof = DeviceProfile(2e9, 20.0, 0.5)
    ch = ChannelState(1e-9, 1e-12, 1e6, 32)
    inp = AllocationInputs.from_devices([prof], [ch], arch, 3, 0.05)
    assert inp.v1[0] == pytest.approx(0.05 - 3 * 20 * 1000 / 2e9)
    assert inp.v2[0] == 32 * 1000
    assert inp.v3[0] == pytest.approx(3 * 20 * 4000 / 2e9)
    assert inp.v4[0] == 32 * 4000
    assert inp.snr[0] == pytest.approx(1e6 * np.log2(1 + 500))


def test_bandwidth_given_lambda_limits():
    inp = random_inputs(np.random.default_rng(0))
    assert np.all(bandwidth_given_lambda(inp, 1e300) == 0.0)
    assert np.all(bandwidth_given_lambda(inp, 1e-300) == 1.0)
    with pytest.raises(ValueError):
        bandwidth_given_lambda(inp, 0.0)


def test_identical_devices_share_equally():
    inp = identical(5)
    plan = solve_allocation(inp)
    assert np.allclose(plan.bandwidth, 0.2, atol=1e-9)
    assert np.allclose(bandwidth_given_lambda(inp, plan.lam), 0.2, atol=1e-9)
    assert np.allclose(baseline_equal(inp).ratios, plan.ratios, atol=1e-9)


def test_stationarity_on_asymmetric_three_devices():
    inp = AllocationInputs(
        v1=[0.02, 0.03, 0.015],
        v2=[3e5, 3e5, 3e5],
        v3=[0.01, 0.02, 0.015],
        v4=[2e6, 2e6, 2e6],
        snr=[5e7, 1.2e8, 8e7],
        threshold=0.04,
    )
    plan = solve_allocation(inp)
    interior = (plan.bandwidth > 0) & (plan.bandwidth < 1)
    assert interior.all()
    assert np.max(np.abs(stationarity_residual(inp, plan.bandwidth, plan.lam))) < 1e-9


def test_single_device_gets_everything():
    inp = one_device()
    plan = solve_allocation(inp)
    assert plan.bandwidth.tolist() == [1.0]
    assert plan.ratios[0] == pytest.approx(min_pruning_ratio(inp, 1.0)[0])


def test_bandwidth_sum_non_increasing_in_lambda():
    inp = random_inputs(np.random.default_rng(5))
    lams = np.logspace(-12, 6, 400)
    sums = [bandwidth_given_lambda(inp, lam).sum() for lam in lams]
    assert np.all(np.diff(sums) <= 1e-15)


def test_solve_matches_oracle_on_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(30):
        inp = random_inputs(rng, n=int(rng.integers(2, 8)), straggler_chance=0.2)
        plan, ref = solve_allocation(inp), oracle_allocation(inp)
        a, b = objective(inp, plan.bandwidth), objective(inp, ref.bandwidth)
        assert abs(a - b) <= 1e-6 * max(abs(b), 1.0)
        assert plan.bandwidth.sum() <= 1 + 1e-9
        assert np.all((plan.bandwidth >= 0) & (plan.bandwidth <= 1))
        assert np.all((plan.ratios >= 0) & (plan.ratios <= 1))


def test_stragglers_flagged_without_raising():
    inp = identical(3, v1=-0.01)
    plan = solve_allocation(inp)
    assert plan.stragglers == {0, 1, 2}
    assert np.all(plan.ratios == 1.0)
    assert plan.bandwidth.sum() == pytest.approx(1.0)


def test_one_useful_device_takes_whole_band():
    inp = AllocationInputs([0.02, -0.5], [1e4, 1e4], [0.01, 0.01], [1e5, 1e5], [1e7, 1e7], 0.03)
    plan = solve_allocation(inp)
    assert plan.bandwidth.tolist() == [1.0, 0.0]
    assert plan.stragglers == {1}


def test_oracle_symmetric_instance_is_uniform():
    plan = oracle_allocation(identical(4))
    assert np.allclose(plan.bandwidth, 0.25, atol=1e-9)


def test_oracle_two_devices_matches_golden_section():
    inp = random_inputs(np.random.default_rng(8), n=2)
    res = minimize_scalar(lambda x: objective(inp, [x, 1 - x]), bracket=(0.0, 0.5, 1.0), method="golden", tol=1e-12)
    best = min(res.fun, objective(inp, [0, 1]), objective(inp, [1, 0]))
    assert objective(inp, oracle_allocation(inp).bandwidth) == pytest.approx(best, rel=1e-9)


def test_oracle_reports_non_convergence():
    with pytest.raises(ConvergenceError, match="did not settle"):
        oracle_allocation(random_inputs(np.random.default_rng(1)), max_iter=2)
    with pytest.raises(ValueError):
        oracle_allocation(random_inputs(np.random.default_rng(1), n=9))


def test_objective_is_sum_of_unclamped_bounds():
    inp = random_inputs(np.random.default_rng(2), straggler_chance=0.4)
    b = np.full(5, 0.2)
    raw = 1 - (b * inp.snr * inp.v1 - inp.v2) / (b * inp.snr * inp.v3 + inp.v4)
    assert objective_terms(inp, b) == pytest.approx(raw, rel=1e-12)
    assert objective(inp, b) == pytest.approx(raw.sum(), rel=1e-12)
    assert np.all(min_pruning_ratio(inp, b) == np.maximum(raw, 0))


def test_objective_zero_numerator_gives_one():
    inp = one_device(v1=5e3 / 1e6)
    assert objective(inp, 1.0) == 1.0


@given(
    st.floats(0, 1e9),
    st.floats(-1, 1),
    st.floats(1e-6, 1e7),
    st.floats(1e-6, 1),
    st.floats(1e-6, 1e7),
)
def test_curvature_nonnegative_when_coefficient_is(x, v1, v2, v3, v4):
    c = objective_curvature(x, v1, v2, v3, v4)
    assert (c >= 0) == (v1 * v4 + v2 * v3 >= 0) or c == 0


def test_curvature_matches_finite_differences():
    v1, v2, v3, v4 = 0.02, 3e5, 0.01, 2e6
    f = lambda x: 1 - (x * v1 - v2) / (x * v3 + v4)
    x, h = 5e7, 1e5
    fd = (f(x + h) - 2 * f(x) + f(x - h)) / h**2
    assert objective_curvature(x, v1, v2, v3, v4) == pytest.approx(fd, rel=1e-4)


def _four_devices(cycles, threshold):
    arch = ModelArch(5_000, ((200, 100), (100, 10)))
    rng = np.random.default_rng(3)
    profiles = [DeviceProfile(f, cycles, 0.63) for f in rng.uniform(1e9, 3e9, 4)]
    channels = [ChannelState(g, 1e-14, 20e6, 64) for g in rng.uniform(1e-11, 1e-9, 4)]
    return arch, profiles, channels, AllocationInputs.from_devices(profiles, channels, arch, 4, threshold)


def _latencies(arch, profiles, channels, plan):
    return [
        device_latency(profiles[n], channels[n], plan.bandwidth[n], arch, plan.ratios[n], 4).total
        for n in range(len(profiles))
    ]


def test_baselines_against_optimal_when_computation_dominates():
    arch, profiles, channels, inp = _four_devices(2000.0, 0.15)
    opt, equal, none = solve_allocation(inp), baseline_equal(inp), baseline_no_pruning(inp)
    assert not opt.stragglers and not equal.stragglers
    for plan in (opt, equal):
        assert max(_latencies(arch, profiles, channels, plan)) <= 0.15 + 1e-9
    assert np.all(equal.bandwidth == 0.25)
    assert np.all(none.ratios == 0)
    assert max(_latencies(arch, profiles, channels, none)) >= max(_latencies(arch, profiles, channels, opt))
    assert objective(inp, opt.bandwidth) <= objective(inp, equal.bandwidth)


def test_weak_channel_starved_when_upload_dominates():
    # the summed bound is nearly linear in b here, so the optimum sits on a face
    arch, profiles, channels, inp = _four_devices(20.0, 0.03)
    opt = solve_allocation(inp)
    starved = np.flatnonzero(opt.bandwidth == 0)
    assert starved.size and set(starved.tolist()) <= opt.stragglers
    lat = _latencies(arch, profiles, channels, opt)
    assert all(lat[n] <= 0.03 + 1e-9 for n in range(4) if n not in opt.stragglers)
    assert objective(inp, opt.bandwidth) <= objective(inp, baseline_equal(inp).bandwidth)


def test_bandwidth_split_ignores_threshold_and_conv_compute():
    # v1 v4 + v2 v3 reduces to T_th * v4, so only the multiplier moves
    plans = [solve_allocation(_four_devices(2000.0, th)[3]) for th in (0.1, 0.15, 0.25)]
    for plan in plans[1:]:
        assert np.allclose(plan.bandwidth, plans[0].bandwidth, rtol=1e-9)


def test_ratio_non_increasing_in_bandwidth_threshold_and_frequency():
    arch = ModelArch(5_000, ((200, 100),))
    ch = ChannelState(3e-10, 1e-14, 20e6, 64)
    bs = np.linspace(0.01, 1, 50)
    inp = AllocationInputs.from_devices([DeviceProfile(2e9, 20, 0.63)], [ch], arch, 4, 0.03)
    assert np.all(np.diff([min_pruning_ratio(inp, b)[0] for b in bs]) <= 0)
    by_th = [
        min_pruning_ratio(AllocationInputs.from_devices([DeviceProfile(2e9, 20, 0.63)], [ch], arch, 4, t), 0.3)[0]
        for t in np.linspace(0.005, 0.1, 40)
    ]
    assert np.all(np.diff(by_th) <= 0)
    by_f = [
        min_pruning_ratio(AllocationInputs.from_devices([DeviceProfile(f, 20, 0.63)], [ch], arch, 4, 0.03), 0.3)[0]
        for f in np.linspace(5e8, 5e9, 40)
    ]
    assert np.all(np.diff(by_f) <= 0)


@settings(max_examples=200)
@given(st.floats(1e5, 1e9), st.floats(1.001, 3.0), st.floats(1e-6, 1e2))
def test_bandwidth_response_to_snr_at_fixed_multiplier(snr, factor, lam):
    # b falls with snr exactly when b * v3 * snr exceeds v4
    v = dict(v1=[0.02], v2=[3e5], v3=[0.01], v4=[2e6], threshold=0.03)
    lo = AllocationInputs(snr=[snr], **v)
    hi = AllocationInputs(snr=[snr * factor], **v)
    b_lo, b_hi = bandwidth_given_lambda(lo, lam)[0], bandwidth_given_lambda(hi, lam)[0]
    if not (0 < b_lo < 1 and 0 < b_hi < 1):
        return
    if b_lo * 0.01 * snr >= 2e6:
        assert b_hi <= b_lo
    elif b_hi * 0.01 * snr * factor <= 2e6:
        assert b_hi >= b_lo


def test_project_simplex():
    assert project_simplex(np.array([0.2, 0.3, 0.5])).tolist() == pytest.approx([0.2, 0.3, 0.5])
    assert project_simplex(np.array([5.0, 0.0])).tolist() == [1.0, 0.0]
    p = project_simplex(np.random.default_rng(0).normal(size=6))
    assert p.sum() == pytest.approx(1.0) and np.all(p >= 0)


def test_allocate_dispatch():
    inp = random_inputs(np.random.default_rng(4))
    assert allocate(inp, "optimal").scheme == "optimal"
    assert allocate(inp, "equal").scheme == "equal"
    assert allocate(inp, "no_pruning").scheme == "no_pruning"
    assert np.all(allocate(inp, "fixed", 0.3).ratios == 0.3)
    with pytest.raises(ValueError):
        allocate(inp, "fixed")
    with pytest.raises(ValueError):
        allocate(inp, "greedy")
    with pytest.raises(ValueError):
        fixed_ratio_plan(inp, 1.2)


def test_plan_to_dict_is_json_ready():
    import json

    doc = solve_allocation(random_inputs(np.random.default_rng(6))).to_dict()
    assert json.loads(json.dumps(doc))["scheme"] == "optimal"
