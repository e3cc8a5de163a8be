"""Tests for datasets, synthetic generation and partitioning."""

import json

import numpy as np
import pytest

from edgeselect.dataset import (
    DatasetFileMissingError,
    DatasetValidationError,
    DimensionMismatchError,
    EncoderSpec,
    InferenceModelSpec,
    LabelValueError,
    ModelBank,
    ScoreDataset,
    ScoreRangeError,
    SizeValueError,
    SyntheticModelConfig,
    generate_synthetic,
    load_dataset,
    split,
    write_dataset,
)


def small_bank(labels=4):
    return ModelBank(
        encoders=(EncoderSpec("e1", 0.01), EncoderSpec("e2", 0.02)),
        models=(InferenceModelSpec("m1", 0.02), InferenceModelSpec("m2", 0.05)),
        label_count=labels,
    )


def small_config(seed=0):
    return SyntheticModelConfig(
        accuracy=[[0.7, 0.8], [0.85, 0.9]],
        size_log_mean=[np.log(1e4), np.log(2e4)],
        size_log_sd=[0.3, 0.3],
        seed=seed,
    )


def test_effnet_webp_timings():
    """Test that the published bank has four encoders and three models with their timings."""
    bank = ModelBank.effnet_webp()
    assert [e.tau_ul for e in bank.encoders] == pytest.approx([0.010, 0.0125, 0.015, 0.0175])
    assert [m.tau_f for m in bank.models] == pytest.approx([0.024, 0.057, 0.098])
    assert bank.d_lbl == 64
    assert len(bank.combinations()) == 12


def test_bank_combinations_are_l_major():
    """Test that composite models are enumerated encoder first, then model."""
    assert small_bank().combinations() == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_bank_rejects_decreasing_model_times():
    """Test that edge models must be ordered by computation time."""
    with pytest.raises(ValueError, match="non-decreasing"):
        ModelBank(
            encoders=(EncoderSpec("e", 0.01),),
            models=(InferenceModelSpec("big", 0.09), InferenceModelSpec("small", 0.02)),
            label_count=3,
        )


def test_generate_synthetic_shapes_and_ranges():
    """Test generated scores, labels and sizes have the right shapes and ranges."""
    bank = small_bank()
    data = generate_synthetic(small_config(), 300, bank)
    assert data.scores.shape == (2, 2, 300, 4)
    assert data.ul_sizes.shape == (2, 300)
    assert data.true_labels.shape == (300,)
    assert np.all((data.scores >= 0) & (data.scores <= 1))
    assert np.allclose(data.scores.sum(axis=-1), 1.0)
    assert np.all(data.ul_sizes >= 1)
    assert data.ul_sizes.dtype == np.int64
    assert set(np.unique(data.true_labels)) <= set(range(4))


def test_generate_synthetic_is_deterministic():
    """Test that the same seed gives the same dataset and another seed does not."""
    bank = small_bank()
    a = generate_synthetic(small_config(seed=3), 100, bank)
    b = generate_synthetic(small_config(seed=3), 100, bank)
    c = generate_synthetic(small_config(seed=4), 100, bank)
    assert np.array_equal(a.scores, b.scores)
    assert np.array_equal(a.ul_sizes, b.ul_sizes)
    assert not np.array_equal(a.scores, c.scores)


def test_generate_synthetic_matches_accuracy():
    """Test that top-1 accuracy of each composite model is close to its setting."""
    bank = small_bank(labels=10)
    config = small_config(seed=1)
    n = 4000
    data = generate_synthetic(config, n, bank)
    for l, k in bank.combinations():
        a = config.accuracy[l][k]
        top1 = np.mean(data.scores_for(l, k).argmax(axis=1) == data.true_labels)
        assert abs(top1 - a) <= 4 * np.sqrt(a * (1 - a) / n)


def test_better_models_are_right_on_a_superset():
    """Test that shared difficulty nests the correctly classified samples."""
    bank = small_bank(labels=10)
    data = generate_synthetic(small_config(seed=2), 500, bank)
    weak = data.scores_for(0, 0).argmax(axis=1) == data.true_labels
    strong = data.scores_for(1, 1).argmax(axis=1) == data.true_labels
    assert np.all(strong[weak])


def test_synthetic_config_validation():
    """Test that accuracy must match the bank shape."""
    config = small_config()
    config.accuracy = [[0.5, 0.5]]
    with pytest.raises(ValueError, match="accuracy"):
        config.validate(small_bank())


def test_synthetic_config_rejects_unknown_keys():
    """Test that from_dict names unknown settings."""
    data = small_config().to_dict()
    data["colour"] = "blue"
    with pytest.raises(ValueError, match="colour"):
        SyntheticModelConfig.from_dict(data)


def test_split_partitions_are_disjoint():
    """Test that the three partitions are disjoint and cover the dataset."""
    data = generate_synthetic(small_config(), 50, small_bank())
    parts = split(data, 10, 15, seed=7)
    assert parts.labeled.sample_count == 10
    assert parts.unlabeled.sample_count == 15
    assert parts.evaluation.sample_count == 25
    idx = np.concatenate([p.indices for p in parts])
    assert sorted(idx.tolist()) == list(range(50))
    assert parts.unlabeled.true_labels is None
    assert parts.labeled.is_labeled and parts.evaluation.is_labeled
    row = int(parts.labeled.indices[0])
    assert np.array_equal(parts.labeled.scores[:, :, 0], data.scores[:, :, row])


def test_split_rejects_empty_evaluation():
    """Test that calibration partitions must leave evaluation samples."""
    data = generate_synthetic(small_config(), 20, small_bank())
    with pytest.raises(ValueError, match="no evaluation"):
        split(data, 10, 10, seed=0)
    with pytest.raises(ValueError):
        split(data, 0, 5, seed=0)


def test_dataset_arrays_are_read_only():
    """Test that dataset arrays cannot be modified in place."""
    data = generate_synthetic(small_config(), 10, small_bank())
    with pytest.raises(ValueError):
        data.scores[0, 0, 0, 0] = 0.5


def test_dataset_shape_mismatch():
    """Test that inconsistent arrays are rejected."""
    with pytest.raises(DimensionMismatchError):
        ScoreDataset(scores=np.zeros((2, 2, 5, 3)), ul_sizes=np.ones((2, 4)))


def test_write_then_load_dataset(tmp_path):
    """Test that a written dataset loads back with the same content."""
    bank = small_bank()
    data = generate_synthetic(small_config(), 30, bank)
    manifest = write_dataset(data, bank, tmp_path, provenance={"seed": 0})

    loaded, loaded_bank = load_dataset(manifest)
    assert loaded_bank == bank
    assert np.array_equal(loaded.true_labels, data.true_labels)
    assert np.array_equal(loaded.ul_sizes, data.ul_sizes)
    assert np.allclose(loaded.scores, data.scores, rtol=1e-8, atol=1e-12)
    assert json.loads(manifest.read_text())["provenance"] == {"seed": 0}


def test_write_dataset_requires_existing_dir(tmp_path):
    """Test that writing into a missing directory names the path."""
    bank = small_bank()
    data = generate_synthetic(small_config(), 5, bank)
    missing = tmp_path / "nope"
    with pytest.raises(DatasetFileMissingError, match="nope"):
        write_dataset(data, bank, missing)


def test_write_dataset_removes_manifest_temp_on_failure(tmp_path, monkeypatch):
    """Test that a failed manifest write leaves no temporary file behind."""
    bank = small_bank()
    data = generate_synthetic(small_config(), 5, bank)

    def fail(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr("edgeselect.dataset.json.dump", fail)
    with pytest.raises(OSError, match="disk full"):
        write_dataset(data, bank, tmp_path)
    assert not list(tmp_path.glob(".manifest.*"))
    assert not (tmp_path / "manifest.json").exists()


def _written(tmp_path, n=5):
    bank = small_bank()
    data = generate_synthetic(small_config(), n, bank)
    return write_dataset(data, bank, tmp_path)


def test_load_reports_score_row(tmp_path):
    """Test that an out-of-range score is reported with its file and 1-based row."""
    manifest = _written(tmp_path)
    path = tmp_path / "scores_e2__m1.csv"
    lines = path.read_text().splitlines()
    lines[2] = "1.5,0,0,0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ScoreRangeError) as exc_info:
        load_dataset(manifest)
    assert exc_info.value.row == 3
    assert "scores_e2__m1.csv" in str(exc_info.value)


def test_load_reports_bad_label(tmp_path):
    """Test that a label outside the label set is rejected with its row."""
    manifest = _written(tmp_path)
    path = tmp_path / "labels.csv"
    lines = path.read_text().splitlines()
    lines[1] = "9"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(LabelValueError) as exc_info:
        load_dataset(manifest)
    assert exc_info.value.row == 2


def test_load_reports_bad_size(tmp_path):
    """Test that a non-positive uplink size is rejected."""
    manifest = _written(tmp_path)
    path = tmp_path / "ul_sizes_e1.csv"
    lines = path.read_text().splitlines()
    lines[4] = "0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SizeValueError) as exc_info:
        load_dataset(manifest)
    assert exc_info.value.row == 5


@pytest.mark.parametrize("value", ["0.5", "2.7"])
def test_load_rejects_fractional_size(tmp_path, value):
    """Test that a size which is not a whole number of bits is rejected with its row."""
    manifest = _written(tmp_path)
    path = tmp_path / "ul_sizes_e1.csv"
    lines = path.read_text().splitlines()
    lines[2] = value
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SizeValueError) as exc_info:
        load_dataset(manifest)
    assert exc_info.value.row == 3
    assert "ul_sizes_e1.csv" in str(exc_info.value)


@pytest.mark.parametrize(
    "section, key",
    [("encoders", "ul_sizes_file"), ("scores", "file")],
)
def test_load_reports_missing_file_entry(tmp_path, section, key):
    """Test that an entry without its file name is a validation error on the manifest."""
    manifest = _written(tmp_path)
    data = json.loads(manifest.read_text())
    del data[section][1][key]
    manifest.write_text(json.dumps(data))
    with pytest.raises(DatasetValidationError, match=key) as exc_info:
        load_dataset(manifest)
    assert exc_info.value.path == manifest


def test_load_reports_missing_score_file(tmp_path):
    """Test that a missing score file raises a missing-file error."""
    manifest = _written(tmp_path)
    (tmp_path / "scores_e1__m2.csv").unlink()
    with pytest.raises(DatasetFileMissingError, match="scores_e1__m2.csv"):
        load_dataset(manifest)


def test_load_reports_row_count_mismatch(tmp_path):
    """Test that a score file with too few rows is a dimension mismatch."""
    manifest = _written(tmp_path)
    path = tmp_path / "scores_e1__m1.csv"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DimensionMismatchError):
        load_dataset(manifest)


def test_load_missing_manifest(tmp_path):
    """Test that a missing manifest raises a missing-file error."""
    with pytest.raises(DatasetFileMissingError):
        load_dataset(tmp_path / "manifest.json")
