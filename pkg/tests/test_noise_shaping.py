import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfans.fading import PAM4, QAM16, BandPlan, BandRequest, BandSpec, FiberParams, plan_bands
from pfans.fading import power_fading_response
from pfans.noise_shaping import (
    ClipSpec, NtfDesign, QuantizerSpec, WeightingFunction, build_weighting, design_feedback_filter, quantize,
    shape, shaped_noise_psd, uniform_grid,
)

RATE = 120e9


def reference_weighting(grid=4096, taps=21):
    fiber = FiberParams()
    plan = plan_bands(fiber, [BandRequest(PAM4, 30e9), BandRequest(QAM16, 8.1e9), BandRequest(QAM16, 6e9)],
                      RATE / 2)
    f = uniform_grid(RATE, grid)
    return build_weighting(power_fading_response(fiber, f), plan, grid, RATE, taps), plan


def nodesign(g):
    g = np.asarray(g, dtype=float)
    return NtfDesign(g, 0.0, np.roots(np.concatenate(([1.0], g))), 0, 1.0)


# -- quantizer -------------------------------------------------------------

@pytest.mark.parametrize("bits, v, expected", [(2, 0.3, 0.25), (2, 10.0, 0.75), (3, -1.0, -0.875),
                                               (2, 0.0, 0.25), (2, -0.5, -0.25), (2, -10.0, -0.75)])
def test_quantize_examples(bits, v, expected):
    assert quantize(v, QuantizerSpec(bits, 1.0)) == expected


def test_quantizer_levels():
    np.testing.assert_allclose(QuantizerSpec(2, 1.0).levels, [-0.75, -0.25, 0.25, 0.75])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.floats(0.1, 10), st.floats(-20, 20))
def test_quantize_is_nearest_level(bits, A, v):
    q = QuantizerSpec(bits, A)
    y = quantize(v, q)
    assert np.min(np.abs(q.levels - y)) < 1e-12 * A
    assert abs(v - y) <= np.min(np.abs(q.levels - v)) + 1e-12 * A


def test_quantizer_validation():
    with pytest.raises(ValueError):
        QuantizerSpec(0, 1.0)
    with pytest.raises(ValueError):
        QuantizerSpec(3, 0.0)


# -- weighting -------------------------------------------------------------

def test_full_band_zero_length_weight_is_one():
    plan = BandPlan([BandSpec(PAM4, 120e9 / 1.1, 0.0)], [])
    f = uniform_grid(RATE, 512)
    w = build_weighting(power_fading_response(FiberParams(length_m=0.0), f), plan, 512, RATE)
    np.testing.assert_array_equal(w.weight, 1.0)


def test_reference_weighting_support():
    w, plan = reference_weighting()
    inside = plan.in_band_mask(w.freqs_hz)
    assert np.all(w.weight[~inside] == 0)
    np.testing.assert_allclose(w.weight[inside],
                               power_fading_response(FiberParams(), w.freqs_hz[inside]).magnitude)
    near = np.argmin(np.abs(w.freqs_hz - 19.16e9))
    assert w.weight[near] == 0


def test_weighting_rejects_small_grid_and_empty_support():
    fiber = FiberParams()
    plan = BandPlan([BandSpec(PAM4, 10e9, 0.0)], [])
    f = uniform_grid(RATE, 64)
    with pytest.raises(ValueError):
        build_weighting(power_fading_response(fiber, f), plan, 30, RATE, taps=21)
    with pytest.raises(ValueError):
        build_weighting(power_fading_response(fiber, f), BandPlan([], []), 64, RATE)


# -- design ----------------------------------------------------------------

def test_flat_weighting_gives_zero_taps():
    f = uniform_grid(1.0, 4096)
    d = design_feedback_filter(WeightingFunction(f, np.ones_like(f), 1.0), 21)
    assert np.max(np.abs(d.g)) < 1e-9


def test_half_band_single_tap():
    # minimiser of (pi/2)(1 + g^2) + 2 g
    f = uniform_grid(1.0, 2**16)
    d = design_feedback_filter(WeightingFunction(f, (f <= 0.25).astype(float), 1.0), 1)
    assert d.g[0] == pytest.approx(-2 / np.pi, abs=1e-4)


def test_zero_taps_rejected():
    f = uniform_grid(1.0, 64)
    with pytest.raises(ValueError):
        design_feedback_filter(WeightingFunction(f, np.ones_like(f), 1.0), 0)


def test_singular_design_asks_for_ridge():
    # a single non-zero weight cannot pin down many taps
    f = uniform_grid(1.0, 256)
    w = np.zeros_like(f)
    w[10] = 1.0
    with pytest.raises(np.linalg.LinAlgError, match="ridge"):
        design_feedback_filter(WeightingFunction(f, w, 1.0), 8)
    d = design_feedback_filter(WeightingFunction(f, w, 1.0), 8, ridge=1e-8)
    assert np.all(np.isfinite(d.g))


def test_design_is_monic_with_k_zeros():
    w, _ = reference_weighting()
    d = design_feedback_filter(w, 21, ridge=0.5)
    assert len(d.ntf_zeros) == 21
    np.testing.assert_allclose(np.poly(d.ntf_zeros), d.ntf, atol=1e-9)
    np.testing.assert_allclose(d.response(w.freqs_hz),
                               1 + np.exp(-2j * np.pi * np.outer(w.freqs_hz / RATE, np.arange(1, 22))) @ d.g)
    assert d.dc_gain == pytest.approx(1 + d.g.sum())


def test_objective_never_worse_than_unshaped():
    w, _ = reference_weighting()
    for ridge in (0.0, 1.0, 100.0):
        d = design_feedback_filter(w, 21, ridge)
        assert d.objective_value <= np.sum(w.weight**2) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_ls_optimality(seed, taps):
    r = np.random.default_rng(seed)
    f = uniform_grid(1.0, 256)
    w = WeightingFunction(f, r.uniform(0, 1, 256) * (r.uniform(size=256) > 0.3), 1.0)
    d = design_feedback_filter(w, taps)
    basis = np.exp(-2j * np.pi * np.outer(f, np.arange(1, taps + 1)))

    def obj(g):
        return np.sum(w.weight**2 * np.abs(1 + basis @ g) ** 2)

    base = obj(d.g)
    for k in range(taps):
        for s in (1e-3, -1e-3):
            g = d.g.copy()
            g[k] += s
            assert obj(g) >= base - 1e-9 * max(base, 1)


def test_design_json_round_trip():
    w, _ = reference_weighting(1024, 5)
    d = design_feedback_filter(w, 5, ridge=1.0)
    back = NtfDesign.from_dict(d.to_dict())
    np.testing.assert_array_equal(back.g, d.g)
    np.testing.assert_allclose(back.ntf_zeros, d.ntf_zeros)
    assert back.grid_size == 1024 and back.ridge == 1.0


def test_zeros_sit_in_occupied_bands():
    # suppression is wanted where the weighting is large, so the NTF zeros
    # at positive frequency land inside the occupied bands
    w, plan = reference_weighting()
    d = design_feedback_filter(w, 21, ridge=0.02 * np.sum(w.weight**2))
    z = d.ntf_zeros[(np.abs(d.ntf_zeros) > 0.7) & (np.angle(d.ntf_zeros) >= 0)]
    f = np.angle(z) / (2 * np.pi) * RATE
    assert len(f) >= 5
    assert plan.in_band_mask(f).mean() >= 0.8


@pytest.mark.xfail(strict=True, reason="zeros suppress noise, so they avoid the notches; see ledger")
def test_zeros_cluster_at_notches():
    w, plan = reference_weighting()
    d = design_feedback_filter(w, 21, ridge=0.02 * np.sum(w.weight**2))
    ang = np.angle(d.ntf_zeros)
    for notch in plan.notches_hz:
        target = 2 * np.pi * notch / RATE
        assert np.min(np.abs(ang - target)) <= 2 * np.pi * 1.5e9 / RATE


# -- loop ------------------------------------------------------------------

def test_loop_hand_executed():
    # x = 0, g = [-0.5], 1-bit quantizer on +-1 (levels +-0.5):
    # v0 = 0 -> +0.5 (tie up), e0 = 0.5
    # v1 = -0.25 -> -0.5, e1 = -0.25
    # v2 = 0.125 -> +0.5, e2 = 0.375
    # v3 = -0.1875 -> -0.5, e3 = -0.3125
    # v4 = 0.15625 -> +0.5, e4 = 0.34375
    tr = shape(np.zeros(5), nodesign([-0.5]), QuantizerSpec(1, 1.0), ClipSpec(10, 10))
    np.testing.assert_array_equal(tr.y, [0.5, -0.5, 0.5, -0.5, 0.5])
    np.testing.assert_array_equal(tr.epsilon, [0.5, -0.25, 0.375, -0.3125, 0.34375])
    np.testing.assert_array_equal(tr.v, [0.0, -0.25, 0.125, -0.1875, 0.15625])


def test_loop_two_bit_first_sample():
    tr = shape(np.zeros(3), nodesign([-0.5]), QuantizerSpec(2, 1.0), ClipSpec(10, 10))
    assert tr.y[0] == 0.25 and tr.epsilon[0] == 0.25


def test_zero_g_is_plain_quantization(rng):
    x = rng.normal(size=2000)
    q = QuantizerSpec(3, 2.0)
    tr = shape(x, nodesign(np.zeros(4)), q, ClipSpec(100, 100))
    np.testing.assert_array_equal(tr.y, quantize(x, q))


def test_loop_identity_and_error_bound(rng):
    x = 2 * rng.normal(size=5000)
    q = QuantizerSpec(3, 2.5)
    tr = shape(x, nodesign(rng.normal(scale=0.3, size=6)), q, ClipSpec(3.0, 1.0))
    np.testing.assert_array_equal(tr.epsilon, tr.y - tr.v)
    over = np.maximum(np.abs(tr.v) - q.full_scale, 0)
    assert np.all(np.abs(tr.epsilon) <= q.step / 2 + over + 1e-12)


def spectral_identity_error(x, g, q):
    tr = shape(x, nodesign(g), q, ClipSpec(1e9, 1e9))
    n, k = len(x), len(g)
    eps = tr.epsilon
    # the loop output only has the first n samples of the full convolution;
    # append the K-sample tail so both sides are transforms of the same sequence
    tail = np.array([sum(g[j - 1] * eps[n + m - j] for j in range(m + 1, k + 1)) for m in range(k)])
    lhs = np.fft.fft(np.concatenate([tr.y - x, tail]))
    ntf = np.fft.fft(np.concatenate(([1.0], g)), n + k)
    rhs = ntf * np.fft.fft(eps, n + k)
    return np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))


def test_spectral_identity(rng):
    x = rng.normal(size=4096)
    g = rng.normal(scale=0.4, size=21)
    assert spectral_identity_error(x, g, QuantizerSpec(3, 3.0)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 6))
def test_spectral_identity_property(seed, taps, bits):
    # without clipping, |g|_1 >= 1 can let eps grow without bound and the check
    # then measures float overflow rather than the recurrence
    r = np.random.default_rng(seed)
    g = r.normal(size=taps)
    g *= 0.9 / np.sum(np.abs(g))
    assert spectral_identity_error(r.normal(size=1024), g, QuantizerSpec(bits, 2.0)) < 1e-9


def _clip2_counts(seed, bits):
    w, _ = reference_weighting()
    d = design_feedback_filter(w, 21, ridge=0.02 * np.sum(w.weight**2))
    x = np.random.default_rng(seed).normal(size=20_000)
    q = QuantizerSpec(bits, 3.0)
    return [shape(x, d, q, ClipSpec(4.0, c)).clip2_count for c in np.arange(0.25, 5.0, 0.25)]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3))
def test_clip2_count_falls_with_level(seed, bits):
    # A different Clip_2 changes the whole error trajectory, so the count can
    # tick up by a few events between neighbouring levels; the trend is down.
    counts = _clip2_counts(seed, bits)
    assert all(b <= a + max(5, 0.01 * a) for a, b in zip(counts, counts[1:]))
    assert counts[-1] <= 0.01 * counts[0]


def test_clip2_count_is_not_strictly_monotone():
    counts = _clip2_counts(64, 2)
    assert any(b > a for a, b in zip(counts, counts[1:]))


def test_shape_rejects_nan():
    with pytest.raises(ValueError):
        shape(np.array([0.0, np.nan]), nodesign([0.1]), QuantizerSpec(2, 1.0), ClipSpec(1, 1))


def test_unshaped_error_psd_is_flat(rng):
    x = rng.normal(size=2**16)
    q = QuantizerSpec(3, 3.0)
    tr = shape(x, nodesign(np.zeros(3)), q, ClipSpec(3.0, 3.0))
    _, p = shaped_noise_psd(tr, x, 1.0, nperseg=256)
    db = 10 * np.log10(p[1:-1])
    assert db.max() - db.min() < 3.0


def test_psd_input_checks(rng):
    tr = shape(rng.normal(size=100), nodesign([0.0]), QuantizerSpec(2, 1.0), ClipSpec(1, 1))
    with pytest.raises(ValueError):
        shaped_noise_psd(tr, np.zeros(99), 1.0)
    with pytest.raises(ValueError):
        shaped_noise_psd(tr, np.zeros(0), 1.0)
