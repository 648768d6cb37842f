import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crispnet import color

# L* of sRGB (0.5, 0.5, 0.5), evaluated with mpmath at 30 digits from the
# piecewise sRGB decode and the CIE cube-root formula
MID_GREY_L = 53.38896474111432


def test_white_maps_to_reference_white():
    lab = color.srgb_to_lab(np.ones((1, 1, 3)))[0, 0]
    np.testing.assert_allclose(lab, [100.0, 0.0, 0.0], atol=1e-9)


def test_black_maps_to_zero():
    np.testing.assert_allclose(color.srgb_to_lab(np.zeros(3)), [0.0, 0.0, 0.0], atol=1e-12)


def test_mid_grey_against_independent_oracle():
    lab = color.srgb_to_lab(np.full(3, 0.5))
    assert abs(lab[0] - MID_GREY_L) < 1e-9
    assert abs(lab[1]) < 1e-9 and abs(lab[2]) < 1e-9


def test_mid_grey_oracle_recomputed_with_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 30
    y = ((mpmath.mpf("0.5") + mpmath.mpf("0.055")) / mpmath.mpf("1.055")) ** mpmath.mpf("2.4")
    L = 116 * mpmath.cbrt(y) - 16
    assert abs(float(L) - MID_GREY_L) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.02, 0.98), min_size=3, max_size=3))
def test_lab_roundtrip(rgb):
    rgb = np.array(rgb)
    back = color.lab_to_srgb(color.srgb_to_lab(rgb))
    # the standard sRGB curve pieces meet only to ~3e-8 at the 0.04045 knee
    np.testing.assert_allclose(back, rgb, atol=1e-7)


def test_delta_e_zero_and_symmetric():
    rng = np.random.default_rng(0)
    a, b = rng.random((8, 9, 3)), rng.random((8, 9, 3))
    assert color.delta_e(a, a) == 0.0
    assert color.delta_e(a, b) == pytest.approx(color.delta_e(b, a))


def test_delta_e_is_rms_over_pixels():
    a = np.zeros((1, 2, 3))
    b = a.copy()
    b[0, 1] = 1.0  # one black pixel vs one white pixel: 100 units there, 0 elsewhere
    assert color.delta_e(a, b) == pytest.approx(math.sqrt(100.0 ** 2 / 2))


def test_psnr_constant_offset():
    a = np.full((16, 16, 3), 0.3)
    assert color.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert color.psnr(a, a) == math.inf


def test_ssim_identity_and_range():
    rng = np.random.default_rng(1)
    a = rng.random((32, 32, 3))
    assert color.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert -1.0 <= color.ssim(a, rng.random((32, 32, 3))) < 0.5


def test_ssim_matches_skimage_oracle():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(2)
    a = rng.random((40, 48, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ya, yb = a @ color.LUMA_709, b @ color.LUMA_709
    ref_map = skm.structural_similarity(ya, yb, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False, full=True)[1]
    # skimage pads and crops (win - 1) // 2 = 5 pixels; the valid region is ours
    ref = ref_map[5:-5, 5:-5].mean()
    assert color.ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_extent_mismatch_and_small_images():
    with pytest.raises(color.ExtentMismatchError):
        color.psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError, match="window"):
        color.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(ValueError):
        color.delta_e(np.zeros((4, 4)), np.zeros((4, 4)))


def test_inputs_clamped():
    a = np.full((12, 12, 3), 1.5)
    assert color.delta_e(a, np.ones((12, 12, 3))) == 0.0


def test_report_roundtrip_and_means():
    rows = [("a", 30.0, 0.9, 2.0), ("b", math.inf, 1.0, 0.0), ("c", 20.0, 0.5, 4.0)]
    text = color.format_report(rows)
    assert text.splitlines()[1] == "b inf 1.000000 0.000000"
    parsed, mean = color.parse_report(text)
    assert [r[0] for r in parsed] == ["a", "b", "c"]
    assert mean[1] == pytest.approx(0.8) and mean[2] == pytest.approx(2.0)
    assert math.isinf(mean[0])
