import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsfl.channel import ScenarioKind, ScenarioSpec, generate
from irsfl.errors import InfeasibleError
from irsfl.fdma import solve_fdma
from irsfl.noma import NomaGains, noma_upload_time, solve_noma, sum_gain_phase_opt, sum_gain_trace
from irsfl.system import DeviceArrays, DeviceProfile, SystemParams, check_solution, homogeneous_devices, noma_prefix_ok
from irsfl.tdma import align_phases, solve_tdma, upload_time
from oracles import bisect_upload_times, rate_bits

P = SystemParams()
FLOOR = P.energy_gain_floor


def _devices(rng, K, energy=(0.05, 0.2)):
    return [DeviceProfile(int(rng.choice([1000, 2000])), 10.0, float(rng.uniform(*energy))) for _ in range(K)]


# ------------------------------------------------------------------ gains type


def test_noma_gains_sorted_ascending():
    g = NomaGains(np.array([3.0, 1.0, 2.0]))
    assert list(g.perm) == [1, 2, 0]
    assert np.all(np.diff(g.sorted) >= 0)


def test_noma_gains_reject_negative():
    with pytest.raises(ValueError):
        NomaGains(np.array([1.0, -1.0]))


# --------------------------------------------------------- sum-gain phases


def test_sum_gain_single_device_is_alignment():
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 1, 12, seed=3))
    v = sum_gain_phase_opt(r, [0], 0.1)
    assert r.gains(v)[0] == pytest.approx(align_phases(r, 0)[1], rel=1e-12)


def test_sum_gain_phase_homogeneous_aligns_everyone():
    r = generate(ScenarioSpec(ScenarioKind.PHASE_HOMOGENEOUS, 5, 16, seed=4))
    E = np.linspace(0.05, 0.2, 5)
    v = sum_gain_phase_opt(r, range(5), E)
    best = np.array([align_phases(r, k)[1] for k in range(5)])
    assert np.sum(E * r.gains(v)) == pytest.approx(np.sum(E * best), rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_sum_gain_beats_random_vectors(seed):
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 6, 10, seed=seed))
    E = np.random.default_rng(seed).uniform(0.05, 0.2, 6)
    v = sum_gain_phase_opt(r, range(6), E)
    V = np.exp(2j * np.pi * np.random.default_rng(100 + seed).random((1000, 10)))
    rand = (np.abs(r.h_direct[None, :] + V @ r.cascade.T) ** 2) @ E
    assert np.sum(E * r.gains(v)) >= rand.max()


@given(st.integers(0, 10_000))
def test_sum_gain_trace_non_decreasing(seed):
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 4, 8, seed=seed))
    v0 = np.exp(2j * np.pi * np.random.default_rng(seed).random(8))
    _, trace = sum_gain_trace(r, range(4), np.full(4, 0.1), v_init=v0)
    assert np.all(np.diff(trace) >= 0)


def test_sum_gain_needs_devices():
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 2, 4, seed=0))
    with pytest.raises(ValueError):
        sum_gain_phase_opt(r, [], 0.1)


# ---------------------------------------------------------- upload time


def test_noma_single_device_equals_tdma_time():
    S = 40 * FLOOR
    assert noma_upload_time(NomaGains(np.array([S])), P) == pytest.approx(upload_time(S, 1.0, P), rel=1e-12)


def test_noma_two_identical_devices_takes_larger_root():
    S = 10 * FLOOR
    one = bisect_upload_times(np.array([S]), P.model_bits, P.bandwidth, P.noise_power)[0]
    two = bisect_upload_times(np.array([2 * S]), 2 * P.model_bits, P.bandwidth, P.noise_power)[0]
    got = noma_upload_time(NomaGains(np.array([S, S])), P)
    assert got == pytest.approx(max(one, two), rel=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_noma_time_tight(seed):
    S = FLOOR * (1 + 10 ** np.random.default_rng(seed).uniform(-2, 3, 5))
    g = NomaGains(S)
    tau = noma_upload_time(g, P)
    assert all(noma_prefix_ok(g.sorted, tau, m, P) for m in range(1, 6))
    assert not all(noma_prefix_ok(g.sorted, 0.999 * tau, m, P) for m in range(1, 6))


@given(st.lists(st.floats(1.5, 1e4), min_size=1, max_size=6), st.integers(0, 5), st.floats(1.0, 10.0))
def test_noma_time_non_increasing_in_power(ratios, k, boost):
    S = FLOOR * np.array(ratios) * (1 + np.arange(len(ratios)))
    k %= S.size
    base = noma_upload_time(NomaGains(S), P)
    S2 = S.copy()
    S2[k] *= boost
    assert noma_upload_time(NomaGains(S2), P) <= base * (1 + 1e-12)


def test_noma_infeasible_prefix_raises():
    # each device alone is feasible, but the two weakest together are not
    S = np.array([0.6, 0.6, 100.0]) * FLOOR * 1.5
    with pytest.raises(InfeasibleError):
        noma_upload_time(NomaGains(S), P)


def test_noma_empty_is_zero():
    assert noma_upload_time(NomaGains(np.zeros(0)), P) == 0.0


# ---------------------------------------------------------------- solve_noma


def test_noma_single_device_equals_tdma():
    for seed in range(3):
        r = generate(ScenarioSpec(ScenarioKind.GENERAL, 1, 10, seed=seed))
        devs = homogeneous_devices(1, energy=0.1)
        assert solve_noma(r, devs, P, 0.0).total_latency == pytest.approx(
            solve_tdma(r, devs, P, 0.0).total_latency, rel=1e-4
        )


@pytest.mark.parametrize("seed", range(4))
def test_noma_power_homogeneous_not_better_than_tdma(seed):
    r = generate(ScenarioSpec(ScenarioKind.POWER_HOMOGENEOUS, 5, 16, seed=seed))
    devs = homogeneous_devices(5, energy=0.1)
    assert solve_noma(r, devs, P, 0.0).total_latency >= solve_tdma(r, devs, P, 0.0).total_latency - 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_noma_phase_homogeneous_not_worse_than_tdma(seed):
    rng = np.random.default_rng(seed)
    r = generate(ScenarioSpec(ScenarioKind.PHASE_HOMOGENEOUS, 5, 16, seed=seed))
    devs = _devices(rng, 5)
    rho = 0.15 * DeviceArrays.of(devs).D.sum()
    assert solve_noma(r, devs, P, rho).total_latency <= solve_tdma(r, devs, P, rho).total_latency * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_noma_rates_inside_full_region(seed):
    rng = np.random.default_rng(seed)
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 8, 12, seed=seed))
    devs = _devices(rng, 8)
    sol = solve_noma(r, devs, P, 0.0)
    assert check_solution(sol, r, devs, P, 0.0) == []
    S = sol.upload_energies * sol.gains
    idx = np.flatnonzero(sol.schedule.as_array())
    for m in range(1, idx.size + 1):
        for sub in itertools.combinations(idx, m):
            cap = rate_bits(sol.upload_latency, S[list(sub)].sum(), P.bandwidth, P.noise_power)
            assert m * P.model_bits <= cap * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_noma_not_worse_than_fdma(seed):
    rng = np.random.default_rng(seed)
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 6, 20, seed=seed))
    devs = _devices(rng, 6)
    rho = 0.15 * DeviceArrays.of(devs).D.sum()
    f = solve_fdma(r, devs, P, rho)
    n = solve_noma(r, devs, P, rho, warm_starts=[(f.schedule, f.local_time, f.phases)])
    assert n.total_latency <= f.total_latency + 1e-6
    assert check_solution(n, r, devs, P, rho) == []


def test_noma_trace_non_increasing():
    rng = np.random.default_rng(9)
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 5, 16, seed=9))
    sol = solve_noma(r, _devices(rng, 5), P, 0.0)
    assert np.all(np.diff(sol.trace) <= 0)


def test_noma_infeasible_raises():
    r = generate(ScenarioSpec(ScenarioKind.GENERAL, 2, 8, seed=0))
    devs = [DeviceProfile(1000, 10.0, 1e-9), DeviceProfile(1000, 10.0, 1e-9)]
    with pytest.raises(InfeasibleError):
        solve_noma(r, devs, P, 0.0)
