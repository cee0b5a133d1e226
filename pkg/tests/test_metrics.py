import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndfield.lfdata import DisparityMap
from ndfield.metrics import badpix, evaluate, mse100, profile_line


def dmap(values, valid=None):
    return DisparityMap(np.asarray(values, dtype=np.float32), valid=valid)


def brute_badpix(pred, gt, t):
    count = 0
    total = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        total += 1
        if abs(float(p) - float(g)) > t:
            count += 1
    return 100.0 * count / total


def brute_mse100(pred, gt):
    acc = 0.0
    for p, g in zip(pred.ravel(), gt.ravel()):
        acc += (float(p) - float(g)) ** 2
    return 100.0 * acc / pred.size


class TestBadpix:
    def test_identical_maps(self):
        m = dmap(np.random.default_rng(0).normal(size=(8, 8)))
        for t in (0.01, 0.03, 0.07):
            assert badpix(m, m, t) == 0.0

    def test_one_of_three(self):
        pred = dmap([[0.0, 0.05, 0.2]])
        gt = dmap([[0.0, 0.0, 0.0]])
        assert badpix(pred, gt, 0.07) == pytest.approx(100.0 / 3)

    def test_two_of_three(self):
        pred = dmap([[0.0, 0.05, 0.2]])
        gt = dmap([[0.0, 0.0, 0.0]])
        assert badpix(pred, gt, 0.01) == pytest.approx(200.0 / 3)

    def test_monotone_in_threshold(self, rng):
        pred = dmap(rng.normal(size=(16, 16)))
        gt = dmap(rng.normal(size=(16, 16)))
        vals = [badpix(pred, gt, t) for t in (0.01, 0.05, 0.1, 0.5, 1.0)]
        assert vals == sorted(vals, reverse=True)

    def test_symmetric(self, rng):
        pred = dmap(rng.normal(size=(9, 9)))
        gt = dmap(rng.normal(size=(9, 9)))
        assert badpix(pred, gt, 0.07) == badpix(gt, pred, 0.07)

    def test_validity_mask_respected(self):
        pred = dmap([[0.0, 5.0]], valid=np.array([[True, False]]))
        gt = dmap([[0.0, 0.0]])
        assert badpix(pred, gt, 0.07) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            badpix(dmap(np.zeros((2, 2))), dmap(np.zeros((3, 3))), 0.07)

    def test_bad_threshold(self):
        m = dmap(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            badpix(m, m, 0.0)


class TestMse100:
    def test_identical(self):
        m = dmap(np.random.default_rng(1).normal(size=(5, 5)))
        assert mse100(m, m) == 0.0

    def test_uniform_offset(self):
        pred = dmap(np.full((4, 4), 0.1))
        gt = dmap(np.zeros((4, 4)))
        assert mse100(pred, gt) == pytest.approx(1.0, rel=1e-5)

    def test_half_offset(self):
        values = np.zeros((2, 4), dtype=np.float32)
        values[0] = 0.5
        assert mse100(dmap(values), dmap(np.zeros((2, 4)))) == \
            pytest.approx(12.5, rel=1e-6)

    def test_symmetric(self, rng):
        pred = dmap(rng.normal(size=(6, 6)))
        gt = dmap(rng.normal(size=(6, 6)))
        assert mse100(pred, gt) == pytest.approx(mse100(gt, pred), rel=1e-12)


class TestBruteForceEquivalence:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_badpix_matches_bruteforce(self, seed):
        r = np.random.default_rng(seed)
        shape = (r.integers(1, 12), r.integers(1, 12))
        pred = r.normal(size=shape).astype(np.float32)
        gt = r.normal(size=shape).astype(np.float32)
        t = float(r.uniform(0.01, 1.0))
        assert badpix(dmap(pred), dmap(gt), t) == brute_badpix(pred, gt, t)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_mse_matches_bruteforce(self, seed):
        r = np.random.default_rng(seed)
        pred = r.normal(size=(7, 7)).astype(np.float32)
        gt = r.normal(size=(7, 7)).astype(np.float32)
        assert mse100(dmap(pred), dmap(gt)) == \
            pytest.approx(brute_mse100(pred, gt), rel=1e-12)


class TestProfile:
    def test_constant_row(self):
        m = dmap(np.full((4, 6), 1.5))
        pairs = profile_line(m, 2)
        assert pairs == [(c, 1.5) for c in range(6)]

    def test_row_out_of_range(self):
        m = dmap(np.zeros((4, 6)))
        with pytest.raises(IndexError):
            profile_line(m, 4)

    def test_ramp_strictly_increasing(self):
        m = dmap(np.tile(np.arange(8, dtype=np.float32), (3, 1)))
        vals = [v for _, v in profile_line(m, 1)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


def test_report_json(rng):
    pred = dmap(rng.normal(size=(5, 5)))
    gt = dmap(rng.normal(size=(5, 5)))
    report = evaluate(pred, gt, scene="toy")
    payload = json.loads(report.to_json(extra={"config_hash": "abc"}))
    assert payload["scene"] == "toy"
    assert set(payload["badpix"]) == {"0.01", "0.03", "0.07"}
    assert payload["pixel_count"] == 25
    assert payload["config_hash"] == "abc"
