"""Tests for the reference losses and their gradient check."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rerank_distill.exceptions import ValidationError
from rerank_distill.losses import (
    GRADIENT_TOLERANCE,
    ScoredList,
    bce_soft,
    central_difference,
    check_gradients,
    infonce_listwise,
    relative_error,
)


def test_bce_at_zero_logit():
    loss, gradient = bce_soft(0.0, 0.5)
    assert loss == pytest.approx(math.log(2), abs=1e-9)
    assert gradient == pytest.approx(0.0, abs=1e-12)
    loss, gradient = bce_soft(0.0, 1.0)
    assert loss == pytest.approx(math.log(2), abs=1e-9)
    assert gradient == pytest.approx(-0.5)


def test_bce_is_finite_for_extreme_logits():
    loss, gradient = bce_soft(1000.0, 0.0)
    assert loss == pytest.approx(1000.0)
    assert gradient == pytest.approx(1.0)
    loss, _ = bce_soft(-1000.0, 0.0)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_bce_rejects_bad_target():
    with pytest.raises(ValidationError):
        bce_soft(0.0, 1.5)
    with pytest.raises(ValidationError):
        bce_soft(float("nan"), 0.5)


def test_infonce_uniform_scores():
    loss, gradient = infonce_listwise(ScoredList((0.3, 0.3, 0.3, 0.3), positive_index=2))
    assert loss == pytest.approx(math.log(4), abs=1e-9)
    np.testing.assert_allclose(gradient, [0.25, 0.25, -0.75, 0.25])


def test_infonce_temperature_scales_gradient():
    scored = ScoredList((1.0, 0.0), positive_index=0, temperature=0.5)
    loss, gradient = infonce_listwise(scored)
    assert loss == pytest.approx(math.log1p(math.exp(-2.0)))
    assert float(gradient.sum()) == pytest.approx(0.0, abs=1e-12)
    assert gradient[0] < 0 < gradient[1]


def test_infonce_is_finite_for_large_scores():
    loss, gradient = infonce_listwise(ScoredList((1000.0, 0.0, -1000.0), positive_index=0))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(gradient))
    loss, _ = infonce_listwise(ScoredList((1000.0, 0.0), positive_index=1))
    assert loss == pytest.approx(1000.0)


@pytest.mark.parametrize(
    ("scores", "index", "temperature"),
    [((0.1, 0.2), 2, 1.0), ((0.1, 0.2), 0, 0.0), ((0.1, float("inf")), 0, 1.0)],
)
def test_scored_list_validation(scores, index, temperature):
    with pytest.raises(ValidationError):
        ScoredList(scores, index, temperature)


def test_infonce_needs_two_scores():
    with pytest.raises(ValidationError):
        infonce_listwise(ScoredList((0.5,), 0))


def test_relative_error_and_central_difference():
    assert relative_error(10.0, 9.0) == pytest.approx(0.1)
    assert relative_error(0.1, 0.2) == pytest.approx(0.1)
    assert relative_error(9.0, 10.0) == relative_error(10.0, 9.0)
    assert relative_error(1e-9, 3e-9) == pytest.approx(2e-9)
    assert relative_error(250.0, 250.0 + 2.5e-4) == pytest.approx(1e-6)
    assert central_difference(lambda x: x**3, 2.0) == pytest.approx(12.0, rel=1e-8)


def test_gradient_check_passes():
    report = check_gradients(seed=0, cases=200)
    assert set(report.max_relative_error) == {"bce_soft", "infonce_listwise"}
    assert report.cases > 400
    assert report.worst <= GRADIENT_TOLERANCE
    assert report.passed


def test_gradient_check_is_seeded():
    assert check_gradients(seed=5, cases=20).max_relative_error == (
        check_gradients(seed=5, cases=20).max_relative_error
    )
