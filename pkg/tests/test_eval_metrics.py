import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangekit import eval_metrics as em
from rangekit.errors import EmptyInput
from rangekit.se3 import rotation_exp


# ---------------------------------------------------------------- rotation error

def test_rotation_error_identity():
    R = rotation_exp(np.array([0.1, -0.2, 0.3]))
    assert em.rotation_error(R, R) == pytest.approx(0.0, abs=1e-7)


def test_rotation_error_quarter_turn():
    R = rotation_exp(np.array([0.0, 0.0, np.pi / 2]))
    assert em.rotation_error(R, np.eye(3)) == pytest.approx(np.pi / 2, abs=1e-12)


def test_rotation_error_recovers_axis_angle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        theta = rng.uniform(0.0, np.pi)
        got = em.rotation_error(rotation_exp(axis * theta), np.eye(3))
        assert got == pytest.approx(theta, abs=1e-9)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3))
@settings(max_examples=100)
def test_rotation_error_symmetric_and_bounded(wa, wb):
    Ra, Rb = rotation_exp(np.array(wa)), rotation_exp(np.array(wb))
    e = em.rotation_error(Ra, Rb)
    assert 0.0 <= e <= np.pi
    assert e == pytest.approx(em.rotation_error(Rb, Ra), abs=1e-9)


# ---------------------------------------------------------------- translation error

def test_translation_error_examples():
    assert em.translation_error(np.ones(3), np.ones(3)) == 0.0
    assert em.translation_error(np.array([3.0, 4.0, 0.0]), np.zeros(3)) == 5.0


def test_translation_error_matches_componentwise():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.normal(size=3), rng.normal(size=3)
        manual = np.sqrt(sum((float(a[i]) - float(b[i])) ** 2 for i in range(3)))
        assert em.translation_error(a, b) == pytest.approx(manual, rel=1e-12)


# ---------------------------------------------------------------- fscore

def test_fscore_identical_clouds_hits_ceiling():
    pts = np.random.default_rng(2).normal(size=(500, 3))
    p, r, f = em.fscore(pts, pts.copy(), threshold=0.1)
    assert (p, r, f) == (1.0, 1.0, 0.5)


def test_fscore_disjoint_is_zero():
    a = np.zeros((10, 3))
    b = np.full((10, 3), 100.0)
    assert em.fscore(a, b, threshold=0.5) == (0.0, 0.0, 0.0)


def test_fscore_half_precision_full_recall():
    gt = np.random.default_rng(3).normal(size=(50, 3))
    recon = np.vstack([gt, gt + 100.0])  # half match, half far away
    p, r, f = em.fscore(recon, gt, threshold=0.01)
    assert p == 0.5 and r == 1.0
    assert f == pytest.approx(1.0 / 3.0, rel=1e-12)


def test_fscore_swap_symmetry():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(80, 3)), rng.normal(size=(60, 3))
    pa, ra, fa = em.fscore(a, b, threshold=0.3)
    pb, rb, fb = em.fscore(b, a, threshold=0.3)
    assert pa == rb and ra == pb
    assert fa == pytest.approx(fb, rel=1e-12)


def test_fscore_bounded_by_half_and_min():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.normal(size=(40, 3))
        b = rng.normal(size=(40, 3)) * rng.uniform(0.5, 2.0)
        p, r, f = em.fscore(a, b, threshold=rng.uniform(0.05, 1.0))
        assert f <= 0.5 + 1e-12
        assert f <= min(p, r) + 1e-12


def test_fscore_f1_flag():
    pts = np.random.default_rng(6).normal(size=(100, 3))
    _, _, f1 = em.fscore(pts, pts.copy(), threshold=0.1, f1=True)
    assert f1 == 1.0


def test_fscore_empty_warns():
    with pytest.warns(UserWarning):
        assert em.fscore(np.zeros((0, 3)), np.ones((5, 3)), 0.1) == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------- pair sampling

def test_sample_pairs_all_adjacent():
    pairs = em.sample_pairs(10, 1, count=100, seed=0)
    assert pairs == [(i, i + 1) for i in range(9)]


def test_sample_pairs_deterministic():
    a = em.sample_pairs(200, 5, count=50, seed=42)
    b = em.sample_pairs(200, 5, count=50, seed=42)
    c = em.sample_pairs(200, 5, count=50, seed=43)
    assert a == b
    assert a != c
    assert all(j - i == 5 for i, j in a)
    assert len(set(a)) == 50


def test_sample_pairs_empty_raises():
    with pytest.raises(EmptyInput):
        em.sample_pairs(5, 10, count=3, seed=0)


def test_sample_pairs_uniform_within_3_sigma():
    n_frames, d, m = 22, 2, 5
    n_valid = n_frames - d
    draws = 10000
    counts = np.zeros(n_valid)
    for seed in range(draws):
        for i, _ in em.sample_pairs(n_frames, d, m, seed=seed):
            counts[i] += 1
    expect = draws * m / n_valid
    sigma = np.sqrt(draws * (m / n_valid) * (1 - m / n_valid))
    assert np.all(np.abs(counts - expect) < 3.0 * sigma + 3.0)
