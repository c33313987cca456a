import json
from pathlib import Path

import numpy as np
import pytest

from deepmark.attacks import (KINDS, AttackSpec, apply_attack, crop_retain, crop_window, gaussian_blur,
                              gaussian_kernel, histogram_eq, jpeg, quality_table, LUMA_QTABLE)
from deepmark.data import synthetic_cover
from deepmark.metrics import psnr

FIXTURES = Path(__file__).parent / "fixtures"


def load_golden():
    import sys
    sys.path.insert(0, str(FIXTURES))
    try:
        import make_attack_golden as gen
    finally:
        sys.path.pop(0)
    return gen, json.loads((FIXTURES / "attack_golden.json").read_text())


@pytest.fixture(scope="module")
def img():
    return synthetic_cover(7)


GRAY = np.full((128, 128, 3), 0.5, np.float32)


def test_spec_json_round_trip_and_validation():
    s = AttackSpec("jpeg", 30, 9)
    assert AttackSpec.from_json(s.to_json()) == s
    assert json.loads(s.to_json()) == {"kind": "jpeg", "strength": 30, "seed": 9}
    for bad in [("blur", 1.0), ("salt_pepper", 1.5), ("crop_retain", 0.0), ("jpeg", 10.5), ("jpeg", 0),
                ("gaussian_noise", 0.0), ("gaussian_blur", -1.0), ("random_noise", float("nan"))]:
        with pytest.raises(ValueError):
            AttackSpec(*bad)
    with pytest.raises(ValueError, match="unknown"):
        AttackSpec.from_dict({"kind": "identity", "power": 2})
    with pytest.raises(ValueError, match="kind"):
        AttackSpec.from_dict({"strength": 2})


def test_identity_and_zero_density(img):
    np.testing.assert_array_equal(apply_attack(img, AttackSpec("identity")), img)
    np.testing.assert_array_equal(apply_attack(img, AttackSpec("salt_pepper", 0.0, 1)), img)
    np.testing.assert_array_equal(apply_attack(img, AttackSpec("random_noise", 0.0, 1)), img)
    np.testing.assert_array_equal(apply_attack(img, AttackSpec("crop_retain", 1.0, 1)), img)


@pytest.mark.parametrize("spec", [AttackSpec(k, s, 3) for k, s in
                                  [("histogram_eq", 0), ("gaussian_blur", 2.0), ("salt_pepper", 0.3),
                                   ("crop_retain", 0.5), ("jpeg", 25), ("gaussian_noise", 0.05),
                                   ("random_noise", 0.3), ("identity", 0)]])
def test_every_kernel_deterministic_bounded_shape_preserving(img, spec):
    a, b = apply_attack(img, spec), apply_attack(img, spec)
    assert a.shape == img.shape and a.dtype == np.float32
    assert a.min() >= 0 and a.max() <= 1
    assert a.tobytes() == b.tobytes()


def test_all_kinds_covered_by_golden():
    gen, golden = load_golden()
    assert {k.split(":")[0] for k in golden} == set(KINDS)


def test_golden_outputs_bit_exact():
    gen, golden = load_golden()
    x = gen.golden_input()
    for kind, strength, seed in gen.CASES:
        out = apply_attack(x, AttackSpec(kind, strength, seed))
        assert gen.digest(out) == golden[f"{kind}:{strength}:{seed}"], kind


def test_jpeg_q10_matches_stored_array():
    gen, _ = load_golden()
    stored = np.load(FIXTURES / "jpeg_q10.npy")
    assert apply_attack(gen.golden_input(), AttackSpec("jpeg", 10)).tobytes() == stored.tobytes()


# --- salt & pepper / random noise -----------------------------------------

def test_salt_pepper_full_density():
    out = apply_attack(GRAY, AttackSpec("salt_pepper", 1.0, 2))
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert (out == out[..., :1]).all()


def test_salt_pepper_exact_count():
    out = apply_attack(GRAY, AttackSpec("salt_pepper", 0.25, 4))
    changed = (out != GRAY).any(axis=2).sum()
    assert changed == int(np.floor(0.25 * 16384))


def test_random_noise_exact_count():
    out = apply_attack(GRAY, AttackSpec("random_noise", 0.1, 5))
    changed = (out != GRAY).any(axis=2).sum()
    # A uniform draw equal to 0.5 in all three channels has probability ~0.
    assert changed == int(np.floor(0.1 * 16384))


@pytest.mark.parametrize("kind", ["salt_pepper", "random_noise"])
def test_changed_count_monotone_in_density(kind):
    counts = [(apply_attack(GRAY, AttackSpec(kind, p, 8)) != GRAY).any(axis=2).sum()
              for p in (0.0, 0.05, 0.2, 0.5, 0.9)]
    assert counts == sorted(counts)


# --- crop ----------------------------------------------------------------

@pytest.mark.parametrize("a", [0.05, 0.35, 0.8])
def test_crop_zero_count_and_region_copy(img, a):
    out = crop_retain(img, a, seed=11)
    zeros = (out == 0).all(axis=2).sum()
    assert zeros >= (1 - a) * 128 * 128
    top, left, h, w = crop_window(128, 128, a, seed=11)
    assert h * w <= np.floor(a * 128 * 128)
    assert 0.5 <= h / w <= 2.0 or min(h, w) == 128
    np.testing.assert_array_equal(out[top:top + h, left:left + w], img[top:top + h, left:left + w])


# --- blur ----------------------------------------------------------------

def test_blur_kernel_sums_to_one_and_radius():
    for s in (0.3, 1.0, 2.5, 7.0):
        k = gaussian_kernel(s)
        assert abs(k.sum() - 1) < 1e-6
        assert k.size == 2 * int(np.ceil(3 * s)) + 1


def test_blur_constant_unchanged():
    out = gaussian_blur(np.full((32, 32, 3), 0.3, np.float32), 2.0)
    np.testing.assert_allclose(out, 0.3, atol=1e-6)


def test_blur_impulse_matches_analytic_profile():
    x = np.zeros((41, 41, 1), np.float32)
    x[20, 20] = 1.0
    sigma = 1.7
    out = gaussian_blur(x, sigma)[..., 0]
    r = int(np.ceil(3 * sigma))
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    expected = np.zeros((41, 41))
    expected[20 - r:20 + r + 1, 20 - r:20 + r + 1] = np.outer(g, g)
    np.testing.assert_allclose(out, expected, atol=1e-4)


def test_blur_linear(img):
    np.testing.assert_allclose(gaussian_blur(0.5 * img, 1.2), 0.5 * gaussian_blur(img, 1.2), atol=1e-6)


# --- noise ---------------------------------------------------------------

def test_gaussian_noise_tiny_variance():
    out = apply_attack(GRAY, AttackSpec("gaussian_noise", 1e-12, 1))
    assert np.abs(out - GRAY).max() <= 1e-4


def test_gaussian_noise_sample_mean():
    v = 1e-3
    out = apply_attack(GRAY, AttackSpec("gaussian_noise", v, 2))
    noise = (out - GRAY)[..., 0].astype(np.float64)
    assert abs(noise.mean()) <= 3 * np.sqrt(v / 16384)
    assert abs(noise.var() - v) < 0.1 * v


# --- histogram equalization ------------------------------------------------

def test_hist_eq_constant_unchanged():
    np.testing.assert_array_equal(histogram_eq(GRAY), GRAY)


def test_hist_eq_two_levels():
    x = np.full((128, 128, 3), 0.25, np.float32)
    x[64:] = 0.75
    out = histogram_eq(x)
    np.testing.assert_allclose(out[:64], 0.0, atol=1e-6)
    np.testing.assert_allclose(out[64:], 1.0, atol=1e-6)


def test_hist_eq_cdf_is_linear_within_one_bin(img):
    out = histogram_eq(img)
    for ch in range(3):
        vals = out[..., ch].ravel()
        levels, counts = np.unique(vals, return_counts=True)
        cdf = np.cumsum(counts) / vals.size
        assert np.abs(cdf - levels).max() <= counts.max() / vals.size + 1e-6


# --- jpeg ------------------------------------------------------------------

def test_jpeg_q100_high_psnr(img):
    assert psnr(img, jpeg(img, 100)) > 40


@pytest.mark.parametrize("q", [1, 10, 50, 90, 100])
def test_jpeg_mid_gray_survives(q):
    out = apply_attack(GRAY, AttackSpec("jpeg", q))
    assert np.abs(out - 0.5).max() <= 2 / 255


def test_quality_table_ijg_scaling():
    np.testing.assert_array_equal(quality_table(LUMA_QTABLE, 50), LUMA_QTABLE)
    assert quality_table(LUMA_QTABLE, 100).max() == 1
    assert quality_table(LUMA_QTABLE, 1).max() == 255
    assert quality_table(LUMA_QTABLE, 10)[0, 0] == (16 * 500 + 50) // 100


def test_jpeg_degrades_with_quality(img):
    scores = [psnr(img, jpeg(img, q)) for q in (5, 20, 60, 95)]
    assert scores == sorted(scores)


def test_rejects_non_image():
    with pytest.raises(ValueError):
        apply_attack(np.zeros((4, 4)), AttackSpec("identity"))
