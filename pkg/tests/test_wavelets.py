import numpy as np
import pytest

from ctrx.errors import DimensionError, ValidationError
from ctrx.wavelets import (FAMILIES, WaveletCoeffs, dwt2, get_family, idwt2,
                           soft_threshold_hf, validate_thresholds)

ALL_FAMILIES = sorted(FAMILIES)


@pytest.mark.parametrize("name", ALL_FAMILIES)
def test_filter_bank_orthonormality(name):
    fam = FAMILIES[name]
    h, g = fam.lowpass, fam.highpass
    L = len(h)
    assert abs(np.sum(h ** 2) - 1.0) <= 1e-12
    assert abs(np.sum(g ** 2) - 1.0) <= 1e-12
    assert abs(np.sum(h) - np.sqrt(2.0)) <= 1e-12
    for k in range(1, L // 2):
        assert abs(np.dot(h[: L - 2 * k], h[2 * k:])) <= 1e-12
        assert abs(np.dot(g[: L - 2 * k], g[2 * k:])) <= 1e-12
    for k in range(-(L // 2) + 1, L // 2):
        lo = max(0, 2 * k)
        hi = min(L, L + 2 * k)
        assert abs(np.dot(h[lo - 2 * k: hi - 2 * k], g[lo:hi])) <= 1e-12


def test_haar_constant_image():
    c = 0.37
    x = np.full((1, 8, 8), c)
    coeffs = dwt2(x, get_family("haar"))
    np.testing.assert_allclose(coeffs.ll, np.full((1, 4, 4), 2 * c), atol=1e-14)
    for band in (coeffs.lh, coeffs.hl, coeffs.hh):
        np.testing.assert_allclose(band, 0.0, atol=1e-14)


def test_zero_image_zero_coeffs():
    coeffs = dwt2(np.zeros((2, 4, 4)), get_family("db4"))
    for band in (coeffs.ll, coeffs.lh, coeffs.hl, coeffs.hh):
        np.testing.assert_array_equal(band, 0.0)


@pytest.mark.parametrize("name", ALL_FAMILIES)
@pytest.mark.parametrize("size", [4, 8, 16, 64])
def test_perfect_reconstruction(name, size):
    rng = np.random.default_rng(size)
    fam = FAMILIES[name]
    x = rng.standard_normal((2, size, size))
    rec = idwt2(dwt2(x, fam), fam)
    assert np.max(np.abs(rec - x)) <= 1e-10


@pytest.mark.parametrize("name", ALL_FAMILIES)
def test_parseval(name):
    rng = np.random.default_rng(99)
    fam = FAMILIES[name]
    for _ in range(20):
        x = rng.standard_normal((1, 16, 16))
        coeffs = dwt2(x, fam)
        assert abs(coeffs.norm() - np.linalg.norm(x)) <= 1e-10


@pytest.mark.parametrize("name", ALL_FAMILIES)
def test_adjoint_identity(name):
    rng = np.random.default_rng(7)
    fam = FAMILIES[name]
    x = rng.standard_normal((1, 8, 8))
    c = WaveletCoeffs(*[rng.standard_normal((1, 4, 4)) for _ in range(4)])
    wx = dwt2(x, fam)
    lhs = (np.sum(wx.ll * c.ll) + np.sum(wx.lh * c.lh)
           + np.sum(wx.hl * c.hl) + np.sum(wx.hh * c.hh))
    rhs = np.sum(x * idwt2(c, fam))
    assert abs(lhs - rhs) <= 1e-10


def test_haar_inverse_of_constant():
    c = -1.25
    coeffs = WaveletCoeffs(
        ll=np.full((1, 4, 4), 2 * c),
        lh=np.zeros((1, 4, 4)),
        hl=np.zeros((1, 4, 4)),
        hh=np.zeros((1, 4, 4)),
    )
    rec = idwt2(coeffs, get_family("haar"))
    np.testing.assert_allclose(rec, np.full((1, 8, 8), c), atol=1e-14)


def test_idwt2_zero_coeffs():
    z = np.zeros((1, 4, 4))
    rec = idwt2(WaveletCoeffs(z, z, z, z), get_family("sym4"))
    np.testing.assert_array_equal(rec, np.zeros((1, 8, 8)))


def test_dwt2_rejects_odd_dims():
    with pytest.raises(DimensionError):
        dwt2(np.zeros((1, 5, 8)), get_family("haar"))


def test_idwt2_rejects_mismatched_subbands():
    z = np.zeros((1, 4, 4))
    bad = WaveletCoeffs(z, z, z, np.zeros((1, 2, 2)))
    with pytest.raises(DimensionError):
        idwt2(bad, get_family("haar"))


def test_get_family_unknown():
    with pytest.raises(ValidationError):
        get_family("coif1")


def soft_scalar(z, lam):
    return np.sign(z) * max(abs(z) - lam, 0.0)


def test_soft_threshold_textbook_values():
    z = np.zeros((1, 2, 2))
    coeffs = WaveletCoeffs(
        ll=np.full((1, 2, 2), 9.0),
        lh=np.array([[[2.0, -0.5], [0.0, 1.0]]]),
        hl=z.copy(),
        hh=z.copy(),
    )
    thr = np.ones((3, 1, 2, 2))
    out = soft_threshold_hf(coeffs, thr)
    np.testing.assert_array_equal(out.lh, np.array([[[1.0, 0.0], [0.0, 0.0]]]))
    np.testing.assert_array_equal(out.hl, z)
    np.testing.assert_array_equal(out.hh, z)


def test_soft_threshold_ll_passthrough_bitwise():
    rng = np.random.default_rng(1)
    coeffs = WaveletCoeffs(*[rng.standard_normal((1, 4, 4)) for _ in range(4)])
    out = soft_threshold_hf(coeffs, np.full((3, 1, 4, 4), 0.3))
    assert out.ll is coeffs.ll


def test_soft_threshold_rejects_nonpositive_lambda():
    z = np.zeros((1, 2, 2))
    coeffs = WaveletCoeffs(z, z, z, z)
    thr = np.ones((3, 1, 2, 2))
    thr[1, 0, 0, 0] = 0.0
    with pytest.raises(ValidationError):
        soft_threshold_hf(coeffs, thr)


def test_soft_threshold_scalar_lipschitz():
    rng = np.random.default_rng(2)
    for _ in range(200):
        a, b = rng.standard_normal(2) * 3
        lam = rng.uniform(1e-3, 2.0)
        assert abs(soft_scalar(a, lam) - soft_scalar(b, lam)) <= abs(a - b) + 1e-15


def test_soft_threshold_nonexpansive_end_to_end():
    rng = np.random.default_rng(3)
    thr = np.exp(rng.standard_normal((3, 2, 4, 4)))
    for _ in range(50):
        c1 = WaveletCoeffs(*[rng.standard_normal((2, 4, 4)) for _ in range(4)])
        c2 = WaveletCoeffs(*[rng.standard_normal((2, 4, 4)) for _ in range(4)])
        s1 = soft_threshold_hf(c1, thr)
        s2 = soft_threshold_hf(c2, thr)
        num = sum(np.sum((getattr(s1, b) - getattr(s2, b)) ** 2)
                  for b in ("ll", "lh", "hl", "hh"))
        den = sum(np.sum((getattr(c1, b) - getattr(c2, b)) ** 2)
                  for b in ("ll", "lh", "hl", "hh"))
        assert num <= den + 1e-12


def test_validate_thresholds_shape_and_sign():
    thr = np.full((3, 2, 8, 8), 0.5)
    out = validate_thresholds(thr, channels=2, patch=16)
    assert out.shape == (3, 2, 8, 8)
    with pytest.raises(DimensionError):
        validate_thresholds(thr, channels=1, patch=16)
    thr[0, 0, 0, 0] = -1.0
    with pytest.raises(ValidationError):
        validate_thresholds(thr, channels=2, patch=16)


def test_batched_transform_matches_loop():
    rng = np.random.default_rng(5)
    fam = FAMILIES["db4"]
    batch = rng.standard_normal((4, 2, 8, 8))
    coeffs = dwt2(batch, fam)
    for i in range(4):
        single = dwt2(batch[i], fam)
        np.testing.assert_array_equal(coeffs.ll[i], single.ll)
        np.testing.assert_array_equal(coeffs.hh[i], single.hh)
