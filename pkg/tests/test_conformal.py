"""Tests for conformal risk control calibration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeselect.conformal import (
    CalibratedModel,
    CalibrationInfeasibleError,
    LossFunction,
    LossKind,
    calibrate,
    calibrate_all,
    candidate_thresholds,
    corrected_risk_level,
    empirical_risk,
    prediction_set,
    prediction_set_mask,
    set_sizes,
)
from edgeselect.dataset import (
    EncoderSpec,
    InferenceModelSpec,
    ModelBank,
    SyntheticModelConfig,
    generate_synthetic,
)

LOSS = LossFunction()


def test_prediction_set_threshold():
    """Test that the set keeps every label scoring at least 1 - lambda."""
    scores = [0.9, 0.8, 0.7, 0.1]
    assert prediction_set(scores, 0.5) == {0, 1, 2}
    assert prediction_set(scores, 0.0) == frozenset()
    assert prediction_set(scores, 1.0) == {0, 1, 2, 3}


def test_prediction_set_includes_boundary_score():
    """Test that a score exactly at 1 - lambda is included."""
    assert prediction_set([0.75, 0.25], 0.25) == {0}


def test_set_sizes_matches_sets():
    """Test that vectorised set sizes agree with per-row sets."""
    rng = np.random.default_rng(0)
    scores = rng.random((20, 6))
    sizes = set_sizes(scores, 0.4)
    assert sizes.tolist() == [len(prediction_set(row, 0.4)) for row in scores]
    assert prediction_set_mask(scores, 0.4).shape == (20, 6)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=10),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_prediction_sets_are_nested(scores, lam_a, lam_b):
    """Test that a larger threshold never removes labels."""
    lo, hi = sorted((lam_a, lam_b))
    assert prediction_set(scores, lo) <= prediction_set(scores, hi)


def test_corrected_risk_level():
    """Test epsilon = alpha (1 - beta) and its argument checks."""
    assert corrected_risk_level(0.01, 0.01) == pytest.approx(0.0099)
    assert corrected_risk_level(0.1, 0.0) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        corrected_risk_level(0.0, 0.01)
    with pytest.raises(ValueError):
        corrected_risk_level(0.01, 1.0)


def test_loss_function():
    """Test the 0-1 miss loss and its scaling by gamma."""
    assert LOSS(frozenset({1, 2}), 2) == 0.0
    assert LOSS(frozenset({1, 2}), 0) == 1.0
    scaled = LossFunction(LossKind.FALSE_NEGATIVE_RATE, gamma=2.0)
    assert scaled(frozenset(), 0) == 2.0
    assert scaled.from_inclusion([True, False]).tolist() == [0.0, 2.0]
    with pytest.raises(ValueError):
        LossFunction(gamma=0.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_candidate_thresholds_are_tight(true_scores):
    """Test that each score has a candidate that is the smallest lambda including it."""
    lams = candidate_thresholds(np.array(true_scores))
    assert lams[0] == 0.0 and lams[-1] == 1.0
    assert np.all(np.diff(lams) > 0)
    for s in true_scores:
        lam = lams[np.flatnonzero(s >= 1.0 - lams)[0]]
        assert lam == 0.0 or s < 1.0 - np.nextafter(lam, -np.inf)


def test_calibrate_meets_target():
    """Test that the calibrated threshold meets the corrected level."""
    rng = np.random.default_rng(1)
    scores = rng.dirichlet(np.ones(5), size=200)
    labels = rng.integers(0, 5, size=200)
    cal = calibrate(scores, labels, LOSS, epsilon=0.2)
    target = 0.2 - (1.0 - 0.2) / 200
    assert empirical_risk(scores, labels, LOSS, cal.threshold) <= target
    assert cal.empirical_risk == pytest.approx(
        empirical_risk(scores, labels, LOSS, cal.threshold)
    )
    assert cal.n_calibration == 200


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(20, 200),
    eps_pair=st.lists(st.floats(0.05, 0.9), min_size=2, max_size=2),
)
def test_threshold_shrinks_as_epsilon_grows(seed, n, eps_pair):
    """Test that a looser level never needs a larger threshold."""
    rng = np.random.default_rng(seed)
    scores = rng.dirichlet(np.ones(4), size=n)
    labels = rng.integers(0, 4, size=n)
    tight, loose = sorted(eps_pair)
    lam_tight = calibrate(scores, labels, LOSS, epsilon=tight).threshold
    lam_loose = calibrate(scores, labels, LOSS, epsilon=loose).threshold
    assert lam_loose <= lam_tight


def test_calibrate_all_scores_one():
    """Test that a perfect model calibrates to lambda = 0."""
    scores = np.eye(4)[[0, 1, 2, 3, 0, 1, 2, 3] * 10]
    labels = np.array([0, 1, 2, 3, 0, 1, 2, 3] * 10)
    assert calibrate(scores, labels, LOSS, epsilon=0.05).threshold == 0.0


def test_calibrate_infeasible_small_n():
    """Test that a level below gamma / (N + 1) is infeasible."""
    scores = np.full((50, 3), 1 / 3)
    labels = np.zeros(50, dtype=int)
    with pytest.raises(CalibrationInfeasibleError) as exc_info:
        calibrate(scores, labels, LOSS, epsilon=0.0099)
    assert exc_info.value.n_calibration == 50
    assert exc_info.value.target < 0


def test_calibrate_rejects_bad_epsilon():
    """Test that epsilon must lie strictly between 0 and gamma."""
    scores = np.full((10, 2), 0.5)
    labels = np.zeros(10, dtype=int)
    with pytest.raises(ValueError):
        calibrate(scores, labels, LOSS, epsilon=1.0)
    with pytest.raises(ValueError):
        calibrate(scores, labels, LOSS, epsilon=0.0)


def test_calibrate_matches_exhaustive_oracle():
    """Test lambda* is exactly the smallest float lambda meeting the level, on random ties."""
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        labels_n = int(rng.integers(2, 6))
        scores = np.round(rng.random((n, labels_n)), int(rng.integers(1, 4)))
        labels = rng.integers(0, labels_n, size=n)
        eps = float(rng.uniform(0.05, 0.9))
        target = eps - (1.0 - eps) / n
        true = scores[np.arange(n), labels]

        def risk(lam):
            return float(np.mean(true < 1.0 - lam))

        grid = np.concatenate(([0.0], 1.0 - true, [1.0]))
        feasible = [lam for lam in grid if risk(lam) <= target]
        if not feasible:
            with pytest.raises(CalibrationInfeasibleError):
                calibrate(scores, labels, LOSS, eps)
            continue
        lam = calibrate(scores, labels, LOSS, eps).threshold
        assert risk(lam) <= target
        assert lam <= min(feasible)
        assert lam == 0.0 or risk(np.nextafter(lam, -np.inf)) > target


def test_held_out_risk_is_controlled():
    """Test that mean held-out risk over repeated calibrations stays near epsilon."""
    bank = ModelBank(
        encoders=(EncoderSpec("e", 0.01),),
        models=(InferenceModelSpec("m", 0.02),),
        label_count=20,
    )
    eps = 0.05
    risks = []
    for seed in range(20):
        config = SyntheticModelConfig(
            accuracy=[[0.8]], size_log_mean=[9.0], size_log_sd=[0.3], seed=seed
        )
        data = generate_synthetic(config, 2500, bank)
        scores, labels = data.scores_for(0, 0), data.true_labels
        cal = calibrate(scores[:500], labels[:500], LOSS, eps)
        risks.append(empirical_risk(scores[500:], labels[500:], LOSS, cal.threshold))
    assert np.mean(risks) <= eps + 0.005


def test_calibrate_all_reports_infeasible():
    """Test that infeasible composite models map to their error."""
    bank = ModelBank(
        encoders=(EncoderSpec("e", 0.01),),
        models=(InferenceModelSpec("a", 0.02), InferenceModelSpec("b", 0.03)),
        label_count=5,
    )
    config = SyntheticModelConfig(
        accuracy=[[0.9, 0.95]], size_log_mean=[9.0], size_log_sd=[0.3], seed=0
    )
    data = generate_synthetic(config, 40, bank)
    results = calibrate_all(data, bank, LOSS, epsilon=0.0099, workers=2)
    assert list(results) == [(0, 0), (0, 1)]
    assert all(isinstance(r, CalibrationInfeasibleError) for r in results.values())

    results = calibrate_all(data, bank, LOSS, epsilon=0.3)
    assert all(isinstance(r, CalibratedModel) for r in results.values())
    assert results[(0, 1)].model_index == 1


def test_calibrated_model_json_fields():
    """Test the calibration record fields and reading them back."""
    bank = ModelBank.effnet_webp(label_count=10)
    cal = CalibratedModel(1, 2, 0.42, 0.0099, 2000, empirical_risk=0.005)
    data = cal.to_dict(bank)
    assert data["encoder_id"] == "webp-20"
    assert data["model_id"] == "effnetv2-l"
    assert data["epsilon"] == pytest.approx(0.0099)
    assert CalibratedModel.from_dict(data, bank) == cal
