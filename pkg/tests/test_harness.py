import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from coapt.config import ExperimentConfig
from coapt.errors import BudgetOverflowError, ConfigurationError, MetricDomainError, VocabLookupError
from coapt.harness import (
    gradcheck_full_loss,
    harmonic_mean,
    run_base_to_novel,
    run_cross_dataset,
    run_domain_generalization,
    run_few_shot,
    sweep_attribute_count,
)

FIXTURES = Path(__file__).parent / "fixtures"

# small, fast settings shared by the protocol tests
FAST = dict(
    classes=4,
    subspace_dim=0,
    dim=8,
    heads=2,
    depth=1,
    ctx_len=12,
    soft_prompts=2,
    num_attrs=3,
    num_sets=2,
    k_ensemble=2,
    shots=3,
    query_shots=3,
    steps=5,
    seeds=[0],
)


class TestHarmonicMean:
    def test_reference_rows(self):
        assert harmonic_mean(84.74, 77.07) == pytest.approx(80.72, abs=0.005)
        assert harmonic_mean(82.69, 63.22) == pytest.approx(71.66, abs=0.005)

    def test_equal_inputs(self):
        assert harmonic_mean(42.0, 42.0) == pytest.approx(42.0)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.uniform(1, 100, size=2)
            hm = harmonic_mean(a, b)
            assert hm == pytest.approx(harmonic_mean(b, a))
            assert min(a, b) <= hm <= max(a, b)

    def test_non_positive_rejected(self):
        with pytest.raises(MetricDomainError):
            harmonic_mean(0.0, 50.0)
        with pytest.raises(MetricDomainError):
            harmonic_mean(50.0, -1.0)


class TestRunFewShot:
    def test_report_shape_and_determinism(self):
        cfg = ExperimentConfig(**FAST)
        a = run_few_shot(cfg)
        b = run_few_shot(cfg)
        assert a.base_accuracy == b.base_accuracy
        assert a.per_seed == b.per_seed
        assert 0.0 <= a.base_accuracy <= 100.0
        assert set(a.per_class_accuracy) == {f"class{i:02d}" for i in range(4)}

    def test_writes_outputs(self, tmp_path):
        cfg = ExperimentConfig(**FAST)
        run_few_shot(cfg, out_dir=tmp_path)
        assert (tmp_path / "seed0.ckpt").exists()


class TestRunBaseToNovel:
    def test_report_consistency(self):
        cfg = ExperimentConfig(**FAST)
        report = run_base_to_novel(cfg)
        assert report.protocol == "base-to-novel"
        assert 0 <= report.base_accuracy <= 100
        assert 0 <= report.novel_accuracy <= 100
        if report.base_accuracy > 0 and report.novel_accuracy > 0:
            assert report.harmonic_mean == pytest.approx(
                harmonic_mean(report.base_accuracy, report.novel_accuracy), abs=1e-9
            )
        assert [row["seed"] for row in report.per_seed] == [0]

    def test_missing_novel_class_fails_before_training(self, tmp_path):
        cfg = ExperimentConfig(**FAST)
        # hand-written vocab covering only one class
        doc = {
            "dataset": "toy",
            "generator": "hand",
            "num_words": 3,
            "num_sets": 2,
            "classes": {"class00": [["a", "b", "c"], ["d", "e", "f"]]},
        }
        vocab_path = tmp_path / "partial.json"
        vocab_path.write_text(json.dumps(doc), encoding="utf-8")
        cfg = dataclasses.replace(cfg, vocab_path=str(vocab_path))
        with pytest.raises(VocabLookupError, match="missing classes"):
            run_base_to_novel(cfg)

    def test_external_vocab_fixture(self, tmp_path):
        # hand-written fixture for the generated class names
        words = lambda tag: [[f"{tag}{k}w{i}" for i in range(3)] for k in range(2)]
        doc = {
            "dataset": "toy",
            "generator": "hand",
            "num_words": 3,
            "num_sets": 2,
            "classes": {f"class{i:02d}": words(f"c{i}s") for i in range(4)},
        }
        vocab_path = tmp_path / "full.json"
        vocab_path.write_text(json.dumps(doc), encoding="utf-8")
        cfg = dataclasses.replace(ExperimentConfig(**FAST), vocab_path=str(vocab_path))
        report = run_base_to_novel(cfg)
        assert report.base_accuracy is not None


class TestRunCrossDataset:
    def test_source_and_targets_reported(self):
        cfg = dataclasses.replace(ExperimentConfig(**FAST), cross_targets=2)
        reports = run_cross_dataset(cfg)
        assert [r.target for r in reports] == ["source", "target0", "target1"]
        for r in reports[1:]:
            assert 0 <= r.novel_accuracy <= 100
            assert len(r.per_seed) == len(cfg.seeds)


class TestRunDomainGeneralization:
    def test_targets_keep_classes_and_report(self):
        cfg = dataclasses.replace(ExperimentConfig(**FAST), domain_rotations=[0.0, 0.5])
        reports = run_domain_generalization(cfg)
        assert [r.target for r in reports] == ["source", "rot0", "rot0.5"]
        # rotation 0 with noise 0.05 stays close to the source accuracy
        assert reports[1].novel_accuracy == pytest.approx(reports[0].base_accuracy, abs=35.0)

    def test_token_mode_rejected(self):
        cfg = dataclasses.replace(ExperimentConfig(**FAST), image_mode="tokens")
        with pytest.raises(ConfigurationError):
            run_domain_generalization(cfg)


class TestSweepAttributeCount:
    def test_rows_and_csv(self):
        cfg = ExperimentConfig(**FAST)
        rows, csv_text = sweep_attribute_count(cfg, [0, 2])
        assert [r["count"] for r in rows] == [0, 2]
        lines = csv_text.strip().splitlines()
        assert lines[0] == "count,base,novel,hm"
        assert len(lines) == 3

    def test_zero_count_equals_no_attribute_run(self):
        cfg = ExperimentConfig(**FAST)
        rows, _ = sweep_attribute_count(cfg, [0])
        direct = run_base_to_novel(dataclasses.replace(cfg, num_attrs=0))
        assert rows[0]["base"] == direct.base_accuracy
        assert rows[0]["novel"] == direct.novel_accuracy

    def test_overflowing_count_names_it(self):
        cfg = ExperimentConfig(**FAST)  # ctx 12: budget = 12 - (1+2+1+1) = 7
        with pytest.raises(BudgetOverflowError, match="9"):
            sweep_attribute_count(cfg, [9])


def test_gradcheck_full_loss_small():
    # temperature high enough that no probability hits the 1e-12 clamp,
    # which is the one non-smooth point of the loss
    cfg = ExperimentConfig(
        classes=2, subspace_dim=0, dim=4, heads=2, depth=1, ctx_len=8, soft_prompts=1,
        vision_prompts=1, num_attrs=1, num_sets=1, k_ensemble=1, image_mode="tokens",
        image_tokens=2, shots=1, query_shots=1, seeds=[0], temperature=0.1,
    )
    assert gradcheck_full_loss(cfg) <= 1e-4
