import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combogran import infotheory as it
from combogran import modal, synth
from oracles import bivariate_mi_bits

RHOS = [round(0.1 * k, 1) for k in range(-9, 10)]


def _biv(rho):
    s = np.array([[1.0, rho], [rho, 1.0]])
    return s[:1, :1], s[1:, 1:], s


def test_weighted_covariance_examples():
    assert it.weighted_covariance([[-1.0], [1.0]])[0, 0] == pytest.approx(1.0)
    assert np.all(it.weighted_covariance(np.ones((5, 3))) == 0)
    x = np.random.default_rng(0).standard_normal((20, 3))
    np.testing.assert_allclose(it.weighted_covariance(x, np.ones(20)), it.weighted_covariance(x, 2 * np.ones(20)))


def test_weighted_covariance_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((30, 4))
    w = rng.uniform(0.1, 1.0, 30)
    expected = np.cov(x, rowvar=False, aweights=w, bias=True)
    np.testing.assert_allclose(it.weighted_covariance(x, w), expected, atol=1e-12)


def test_weighted_covariance_errors():
    with pytest.raises(ValueError):
        it.weighted_covariance([[1.0, 2.0]])
    with pytest.raises(ValueError):
        it.weighted_covariance([[1.0, 2.0], [1.0]])
    with pytest.raises(ValueError):
        it.weighted_covariance([[1.0], [2.0]], [1.0, 0.0])


@pytest.mark.parametrize("rho", RHOS)
def test_bivariate_closed_form(rho):
    res = it.gaussian_mi(*_biv(rho), omega_avg=0.3)
    assert abs(res.raw_bits - bivariate_mi_bits(rho)) < 1e-9
    assert abs(res.i_bits - bivariate_mi_bits(rho) * 0.85) < 1e-9
    assert res.epsilon == 0.0


def test_documented_values():
    assert it.gaussian_mi(*_biv(0.8)).i_bits == pytest.approx(0.7370, abs=1e-4)
    assert it.gaussian_mi(*_biv(0.8), omega_avg=0.3).i_bits == pytest.approx(0.6264, abs=1e-4)
    assert it.gaussian_mi(*_biv(0.0)).raw_bits == 0.0


def test_correction_monotone():
    vals = [it.gaussian_mi(*_biv(0.6), omega_avg=w).i_bits for w in np.linspace(0, 1, 11)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    res = it.gaussian_mi(*_biv(0.6))
    assert res.i_bits == res.raw_bits


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 4))
def test_symmetry_and_nonnegativity(seed, dx, dy):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dx + dy, dx + dy + 3))
    joint = a @ a.T / (dx + dy + 3)
    sx, sy = joint[:dx, :dx], joint[dx:, dx:]
    xy = it.gaussian_mi(sx, sy, joint)
    perm = list(range(dx, dx + dy)) + list(range(dx))
    yx = it.gaussian_mi(sy, sx, joint[np.ix_(perm, perm)])
    assert abs(xy.raw_bits - yx.raw_bits) < 1e-9
    assert xy.raw_bits >= -1e-9


def test_block_diagonal_is_zero():
    sx = np.array([[2.0, 0.3], [0.3, 1.0]])
    sy = np.array([[0.5]])
    joint = np.zeros((3, 3))
    joint[:2, :2], joint[2:, 2:] = sx, sy
    assert it.gaussian_mi(sx, sy, joint).raw_bits == pytest.approx(0.0, abs=1e-12)


def test_regularization_reported():
    x = np.random.default_rng(2).standard_normal((50, 2))
    res = it.mi_from_samples(x, x[:, :1])  # y duplicates a column of x: singular joint
    assert res.epsilon > 0
    assert math.isfinite(res.raw_bits)


def test_block_mismatch_rejected():
    sx, sy, joint = _biv(0.5)
    with pytest.raises(ValueError, match="diagonal blocks"):
        it.gaussian_mi(sx * 2, sy, joint)
    with pytest.raises(ValueError):
        it.gaussian_mi(sx, sy, joint, omega_avg=1.5)


@given(st.floats(0.05, 20.0), st.floats(0.05, 20.0))
def test_modality_weights_cancel(wa, wb):
    rng = np.random.default_rng(3)
    v = rng.standard_normal((60, 2))
    s = v + 0.5 * rng.standard_normal((60, 2))
    base = it.mi_between(it.ModalityFeatureSet("S", s, modality_weight=1.0),
                         it.ModalityFeatureSet("V", v, modality_weight=1.0))
    scaled = it.mi_between(it.ModalityFeatureSet("S", s, modality_weight=wa),
                           it.ModalityFeatureSet("V", v, modality_weight=wb))
    assert scaled.raw_bits == pytest.approx(base.raw_bits, abs=1e-8)


def test_ordering_on_generative_corpus():
    s, m, v = synth.generative_features(np.random.default_rng(0))
    res = it.check_ordering(s, m, v, omega_avg=0.3)
    assert res.ordered
    assert res.i_sv.i_bits == pytest.approx(res.i_sv.raw_bits * 0.85)


def test_ordering_degenerate_when_independent():
    rng = np.random.default_rng(5)
    scenes = [f"k{i}" for i in range(200)]
    s = {k: rng.standard_normal((3, 2)) for k in scenes}
    m = {k: rng.standard_normal(2) for k in scenes}
    v = {k: rng.standard_normal(2) for k in scenes}
    res = it.check_ordering(s, m, v)
    assert res.i_sv.raw_bits < 0.1 and res.i_sm.raw_bits < 0.1


def test_ordering_missing_features():
    with pytest.raises(modal.UsageError):
        it.check_ordering({}, {"a": [0.0]}, {"a": [0.0]})


def test_corpus_features_and_omega(ref_videos):
    videos = synth.reference_videos(seed=0, n_scenes=40, n_statics=200, with_features=True, d=4)
    corpus = modal.decompose(videos)
    s, m, v = it.corpus_features(corpus)
    assert set(s) == set(m) == set(v)
    assert it.omega_average(modal.overlapping_pairs(ref_videos)) == pytest.approx(0.2)
    assert it.omega_average([]) == 0.0
    with pytest.raises(modal.UsageError):
        it.corpus_features(modal.decompose(ref_videos))
