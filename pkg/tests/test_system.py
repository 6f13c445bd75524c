import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsfl.errors import DomainError
from irsfl.system import (
    LN2,
    DeviceArrays,
    DeviceProfile,
    Schedule,
    SystemParams,
    dbm_to_watt,
    local_profile,
    noma_prefix_ok,
    round_local_time,
    uploaded_bits,
)
from irsfl.noma import NomaGains, noma_upload_time

P = SystemParams()


def test_default_noise_is_minus_80_dbm():
    assert P.noise_power == pytest.approx(1e-11)
    assert dbm_to_watt(-80.0) == pytest.approx(1e-11)
    assert P.noise_density == pytest.approx(1e-18)


@pytest.mark.parametrize("field", ["bandwidth", "noise_power", "model_bits", "energy_coeff", "K", "N"])
def test_params_must_be_positive(field):
    with pytest.raises(ValueError):
        SystemParams(**{field: 0})


@pytest.mark.parametrize("kw", [{"samples": 0}, {"cycles_per_sample": 0.5}, {"energy_budget": 0.0}])
def test_device_invariants(kw):
    args = {"samples": 10} | kw
    with pytest.raises(ValueError):
        DeviceProfile(**args)


def test_local_profile_time():
    t, _ = local_profile(DeviceProfile(1000, 10), 1e5, P)
    assert t == pytest.approx(0.1)


def test_local_profile_energy():
    _, e = local_profile(DeviceProfile(1000, 10), 1e8, P)
    assert e == pytest.approx(1e-7)


def test_local_profile_scaling():
    d = DeviceProfile(1000, 10)
    t1, e1 = local_profile(d, 1e7, P)
    t2, e2 = local_profile(d, 2e7, P)
    assert t2 == pytest.approx(t1 / 2) and e2 == pytest.approx(4 * e1)


def test_local_profile_rejects_nonpositive_frequency():
    with pytest.raises(DomainError):
        local_profile(DeviceProfile(10), 0.0, P)


def test_round_local_time():
    assert round_local_time(Schedule((1, 1)), (0.1, 0.2)) == 0.2
    assert round_local_time(Schedule((0, 1)), (0.9, 0.2)) == 0.2
    assert round_local_time(Schedule((0, 0)), (0.9, 0.2)) == 0.0


def test_uploaded_bits_zero_energy():
    assert uploaded_bits(0.1, 0.0, 1e-9, 1.0, P) == 0.0


def test_uploaded_bits_asymptote():
    E, g = 0.05, 1e-10
    limit = E * g / (P.noise_density * LN2)
    assert uploaded_bits(1e6, E, g, 1.0, P) == pytest.approx(limit, rel=1e-3)


def test_uploaded_bits_fraction_form():
    x, E, g, b = 0.01, 0.02, 3e-10, 0.3
    expected = b * P.bandwidth * x * math.log2(1 + E * g / (x * b * P.noise_power))
    assert uploaded_bits(x, E, g, b, P) == pytest.approx(expected, rel=1e-13)


@given(st.floats(1e-6, 10.0), st.floats(1e-14, 1e-8))
def test_uploaded_bits_increasing_and_concave(x, Eg):
    xs = x * np.array([1.0, 1.5, 2.0])
    b = uploaded_bits(xs, Eg, 1.0, 1.0, P)
    assert b[1] > b[0] and b[2] > b[1]
    assert b[2] - 2 * b[1] + b[0] <= 1e-9 * b[2]


@given(st.floats(1e-5, 1.0), st.floats(1e-5, 1.0), st.floats(1e-13, 1e-9), st.floats(1e-13, 1e-9), st.floats(0, 1))
def test_uploaded_bits_jointly_concave(x1, x2, y1, y2, t):
    mid = uploaded_bits(t * x1 + (1 - t) * x2, t * y1 + (1 - t) * y2, 1.0, 1.0, P)
    chord = t * uploaded_bits(x1, y1, 1.0, 1.0, P) + (1 - t) * uploaded_bits(x2, y2, 1.0, 1.0, P)
    assert mid >= chord * (1 - 1e-12)


def test_schedule_basics():
    s = Schedule((1, 0, 1))
    assert s.scheduled == (0, 2) and s.count == 2 and not s.is_empty()
    assert s.excluded_samples([10, 20, 30]) == 20.0
    assert s.flip(1) == Schedule.full(3)
    assert Schedule.empty(3).is_empty()
    with pytest.raises(ValueError):
        Schedule((0, 2))


def test_upload_energy_broadcasts():
    dev = DeviceArrays.of([DeviceProfile(1000), DeviceProfile(2000)])
    E = dev.upload_energy(np.array([1e-3, 1e-2]), P)
    assert E.shape == (2, 2)
    assert E[0, 1] == pytest.approx(0.1 - 1e-27 * (2e4) ** 3 / 1e-6)


def test_noma_prefix_single_device_is_tdma_feasibility():
    S = np.array([3e-12])
    tau = noma_upload_time(NomaGains(S), P)
    assert noma_prefix_ok(S, tau, 1, P)
    assert not noma_prefix_ok(S, tau * 0.999, 1, P)


def test_noma_prefix_at_optimum_tight_and_feasible():
    S = np.sort(np.random.default_rng(0).uniform(1e-12, 1e-11, 6))
    tau = noma_upload_time(NomaGains(S), P)
    oks = [noma_prefix_ok(S, tau, m, P) for m in range(1, 7)]
    assert all(oks)
    slack = [uploaded_bits(tau, S[:m].sum(), 1.0, 1.0, P) - m * P.model_bits for m in range(1, 7)]
    assert min(abs(x) for x in slack) <= 1e-8 * P.model_bits


def test_noma_prefix_below_optimum_violates():
    S = np.sort(np.random.default_rng(1).uniform(1e-12, 1e-11, 5))
    tau = noma_upload_time(NomaGains(S), P)
    assert not all(noma_prefix_ok(S, tau * (1 - 1e-3), m, P) for m in range(1, 6))
