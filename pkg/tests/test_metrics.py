"""Tests for the SDR metric."""

import math

import numpy as np
import pytest

from asyncsep.dsp import SampledSignal
from asyncsep.metrics import sdr


def sig(x):
    return SampledSignal(np.asarray(x, float), 16000.0)


def test_exact_estimate_returns_infinity(rng):
    x = rng.standard_normal((100, 2))
    assert sdr(sig(x), sig(x.copy())) == math.inf


def test_zero_estimate_is_zero_db(rng):
    x = rng.standard_normal((100, 2))
    assert sdr(sig(x), sig(np.zeros_like(x))) == pytest.approx(0.0)


def test_double_estimate_is_zero_db(rng):
    x = rng.standard_normal(64)
    assert sdr(sig(x), sig(2.0 * x)) == pytest.approx(0.0)


def test_matches_two_pass_energy_oracle(rng):
    ref = rng.standard_normal((50, 2))
    est = ref + 0.1 * rng.standard_normal((50, 2))
    num = 0.0
    den = 0.0
    for t in range(50):
        for c in range(2):
            num += ref[t, c] ** 2
            den += (est[t, c] - ref[t, c]) ** 2
    assert sdr(sig(ref), sig(est)) == pytest.approx(10 * math.log10(num / den),
                                                    abs=1e-12)


def test_zero_reference_rejected():
    with pytest.raises(ValueError, match="all-zero reference"):
        sdr(sig(np.zeros(10)), sig(np.ones(10)))


def test_shape_mismatch_rejected(rng):
    with pytest.raises(ValueError, match="shapes differ"):
        sdr(sig(np.ones(10)), sig(np.ones(11)))
