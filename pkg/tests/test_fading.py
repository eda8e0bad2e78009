import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfans.fading import (
    PAM4, QAM16, BandPlan, BandRequest, BandSpec, FiberParams, PlanningError, notch_frequencies, plan_bands,
    power_fading_response,
)

# sqrt((2k-1) c / (2 lambda^2 D L)) for the 10 km, 17 ps/(nm km), 1550 nm fiber,
# evaluated at 30 digits with mpmath
NOTCHES_10KM_GHZ = [19.1575159042, 33.1817908929, 42.8375078419, 50.6860228204, 57.4725477127]


def reference_requests():
    return [BandRequest(PAM4, 30e9), BandRequest(QAM16, 8.1e9), BandRequest(QAM16, 6e9)]


def test_notches_match_closed_form():
    got = notch_frequencies(FiberParams(), 60e9)
    np.testing.assert_allclose(np.array(got) / 1e9, NOTCHES_10KM_GHZ, rtol=1e-10)


def test_notches_match_rounded_values():
    got = np.array(notch_frequencies(FiberParams(), 60e9)[:5]) / 1e9
    np.testing.assert_allclose(got, [19.16, 33.19, 42.85, 50.69, 57.48], rtol=1e-3)


def test_response_zero_at_notches_and_unity_at_dc():
    fiber = FiberParams()
    f = np.array([0.0, *notch_frequencies(fiber, 60e9)])
    mag = power_fading_response(fiber, f).magnitude
    assert mag[0] == 1.0
    assert np.all(mag[1:] < 1e-9)


def test_zero_length_has_no_fading():
    fiber = FiberParams(length_m=0.0)
    f = np.linspace(0, 60e9, 101)
    np.testing.assert_array_equal(power_fading_response(fiber, f).magnitude, 1.0)
    assert notch_frequencies(fiber, 60e9) == []


def test_response_rejects_non_ascending_grid():
    with pytest.raises(ValueError):
        power_fading_response(FiberParams(), [1e9, 1e9, 2e9])


@pytest.mark.parametrize("kwargs", [{"length_m": -1}, {"dispersion_ps_nm_km": 0}, {"wavelength_nm": -5}])
def test_fiber_validation(kwargs):
    with pytest.raises(ValueError):
        FiberParams(**kwargs)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e3, 100e3), st.floats(1e9, 200e9))
def test_response_bounded(length, fmax):
    fiber = FiberParams(length_m=length)
    mag = power_fading_response(fiber, np.linspace(0, fmax, 257)).magnitude
    assert np.all((mag >= 0) & (mag <= 1))


@settings(max_examples=60, deadline=None)
@given(st.floats(1e3, 100e3))
def test_notch_count_grows_with_length(length):
    short = notch_frequencies(FiberParams(length_m=length), 60e9)
    long = notch_frequencies(FiberParams(length_m=2 * length), 60e9)
    assert len(long) >= len(short)


def test_reference_plan_layout():
    plan = plan_bands(FiberParams(), reference_requests(), 60e9, guard_hz=0.5e9)
    b1, b2, b3 = plan.bands
    assert b1.is_baseband and b1.occupied == pytest.approx((0.0, 16.5e9))
    # centre of [notch1 + guard, notch2 - guard] and [notch2 + guard, notch3 - guard]
    n = np.array(NOTCHES_10KM_GHZ) * 1e9
    assert b2.carrier_hz == pytest.approx((n[0] + n[1]) / 2, rel=1e-9)
    assert b3.carrier_hz == pytest.approx((n[1] + n[2]) / 2, rel=1e-9)
    assert plan.notches_hz == pytest.approx(list(n), rel=1e-10)


def test_weighting_notch_lies_outside_occupancy():
    plan = plan_bands(FiberParams(), reference_requests(), 60e9)
    assert not plan.in_band_mask(np.array([19.16e9]))[0]


def test_zero_length_plan_packs_bands():
    plan = plan_bands(FiberParams(length_m=0.0), reference_requests(), 60e9)
    plan.validate()
    assert plan.bands[0].is_baseband
    assert all(hi < 60e9 for _, hi in plan.occupied_intervals())


def test_plan_requires_descending_baud():
    with pytest.raises(ValueError):
        plan_bands(FiberParams(), list(reversed(reference_requests())), 60e9)


def test_oversized_baseband_band_fails():
    with pytest.raises(PlanningError):
        plan_bands(FiberParams(), [BandRequest(PAM4, 40e9)], 60e9)


def test_too_many_bands_fail():
    reqs = reference_requests() + [BandRequest(QAM16, 6e9)] * 6
    with pytest.raises(PlanningError):
        plan_bands(FiberParams(), reqs, 60e9)


def test_validate_catches_overlap_and_notch():
    overlap = BandPlan([BandSpec(PAM4, 10e9, 0.0), BandSpec(QAM16, 4e9, 6e9)], [])
    with pytest.raises(PlanningError):
        overlap.validate()
    notched = BandPlan([BandSpec(QAM16, 4e9, 20e9)], [19.16e9])
    with pytest.raises(PlanningError):
        notched.validate()


@settings(max_examples=80, deadline=None)
@given(
    st.floats(2e3, 40e3),
    st.lists(st.floats(0.5e9, 8e9), min_size=1, max_size=4),
    st.booleans(),
)
def test_planner_output_is_valid(length, bauds, first_pam4):
    bauds = sorted(bauds, reverse=True)
    reqs = [BandRequest(PAM4 if (i == 0 and first_pam4) else QAM16, b) for i, b in enumerate(bauds)]
    fiber = FiberParams(length_m=length)
    try:
        plan = plan_bands(fiber, reqs, 60e9)
    except PlanningError:
        return
    plan.validate()
    for lo, hi in plan.occupied_intervals():
        assert 0 <= lo < hi < 60e9
        assert all(not (lo - 0.5e9 < f < hi + 0.5e9) for f in plan.notches_hz)
    for spec, req in zip(plan.bands, reqs):
        if spec.format == QAM16:
            assert not spec.is_baseband
