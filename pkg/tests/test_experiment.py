"""Experiment orchestration tests: reports, comparisons, checkpoints."""

import copy
import math

import numpy as np
import pytest

from oodkit import heads
from oodkit.data import gaussian_blobs, ood_ring
from oodkit.experiment import (
    CheckpointError,
    ExperimentConfig,
    ReportSchemaError,
    compare_heads,
    histogram_report,
    load_checkpoint,
    run_experiment,
    save_checkpoint,
    train_single_seed,
    validate_report,
    write_histogram_csv,
    write_scores_csv,
)
from oodkit.model import backbone_forward, make_train_state
from oodkit.numerics import ContractViolation


def tiny_config(head="isomaxplus", **overrides):
    base = {
        "head": head,
        "backbone_widths": [2, 8, 8],
        "in_distribution": {"kind": "blobs", "classes": 3, "dims": 2,
                            "centers_radius": 4.0, "sigma": 0.5, "n_per_class": 40},
        "ood": [{"name": "ring", "kind": "ring", "inner_radius": 8.0,
                 "outer_radius": 12.0, "n": 60}],
        "score_kinds": (["min_distance", "entropic"] if head != "softmax"
                        else ["entropic"]),
        "seeds": [1, 2],
        "sgd": {"epochs": 3, "batch_size": 16},
        "val_fraction": 0.25,
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


class TestConfigValidation:
    def test_from_dict_round_trip(self):
        cfg = tiny_config()
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_single_class_rejected(self):
        with pytest.raises(ContractViolation, match="at least 2 classes"):
            tiny_config(in_distribution={"kind": "blobs", "classes": 1, "dims": 2,
                                         "centers_radius": 4.0, "sigma": 0.5,
                                         "n_per_class": 10})

    def test_min_distance_needs_distance_head(self):
        with pytest.raises(ContractViolation):
            tiny_config(head="softmax", score_kinds=["min_distance"])

    def test_scores_need_an_ood_spec(self):
        with pytest.raises(ContractViolation):
            tiny_config(ood=[])

    def test_no_seeds_rejected(self):
        with pytest.raises(ContractViolation):
            tiny_config(seeds=[])

    def test_unknown_key_rejected(self):
        with pytest.raises(ContractViolation):
            ExperimentConfig.from_dict({**tiny_config().to_dict(), "dropout": 0.5})


class TestRunExperiment:
    def test_deterministic_report_bytes(self):
        cfg = tiny_config()
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert a.to_json(include_wall_time=False) == b.to_json(include_wall_time=False)

    def test_report_validates_and_aggregates(self):
        report = run_experiment(tiny_config())
        validate_report(report.to_dict())
        assert len(report.per_seed) == 2
        agg = report.aggregate
        assert set(r["score"] for r in agg["detection"]) == {"min_distance", "entropic"}
        assert 0.0 <= agg["accuracy"]["mean"] <= 1.0
        assert agg["accuracy"]["std"] >= 0.0

    def test_single_seed_reports_zero_std(self):
        report = run_experiment(tiny_config(seeds=[3]))
        assert report.aggregate["accuracy"]["std"] == 0.0

    def test_heldout_class_protocol(self):
        cfg = tiny_config(
            in_distribution={"kind": "blobs", "classes": 4, "dims": 2,
                             "centers_radius": 4.0, "sigma": 0.5,
                             "n_per_class": 30, "train_classes": 2},
            ood=[{"name": "heldout", "kind": "heldout"}],
        )
        report = run_experiment(cfg)
        assert report.per_seed[0]["ood_evaluations"][0]["ood"] == "heldout"
        validate_report(report.to_dict())


class TestValidateReport:
    def test_mutated_report_fails(self):
        report = run_experiment(tiny_config(seeds=[1])).to_dict()
        broken = copy.deepcopy(report)
        del broken["aggregate"]
        with pytest.raises(ReportSchemaError, match="aggregate"):
            validate_report(broken)
        broken = copy.deepcopy(report)
        broken["schema_version"] = 2
        with pytest.raises(ReportSchemaError):
            validate_report(broken)
        broken = copy.deepcopy(report)
        broken["per_seed"][0]["accuracy"] = "high"
        with pytest.raises(ReportSchemaError):
            validate_report(broken)


class TestCompareHeads:
    def configs(self):
        return [tiny_config("softmax"), tiny_config("isomax", score_kinds=["entropic"]),
                tiny_config("isomaxplus", score_kinds=["min_distance"])]

    def test_identical_heads_zero_deltas_no_flags(self):
        cfgs = [tiny_config("softmax"), tiny_config("softmax")]
        comparison = compare_heads(cfgs)
        assert comparison.accuracy_drop_flags == []
        assert all(row["delta_pp_vs_baseline"] == 0.0 for row in comparison.accuracy)

    def test_three_way_layout(self):
        comparison = compare_heads(self.configs())
        assert [c["head"] for c in comparison.columns] == [
            "softmax", "isomax", "isomaxplus"]
        assert comparison.baseline_head == "softmax"
        metrics_seen = {(b["ood"], b["metric"]) for b in comparison.detection}
        assert ("ring", "auroc") in metrics_seen
        assert ("ring", "tnr_at_tpr95") in metrics_seen
        assert ("ring", "dtacc") in metrics_seen

    def test_drop_flag_raised_for_broken_head(self):
        cfgs = self.configs()
        reports = [run_experiment(c) for c in cfgs]
        # sabotage the isomax accuracy by five points
        broken = reports[1]
        broken.aggregate["accuracy"]["mean"] -= 0.05
        comparison = compare_heads(cfgs, reports)
        assert any(f["head"] == "isomax" and f["drop_pp"] > 1.0
                   for f in comparison.accuracy_drop_flags)

    def test_mismatched_data_specs_rejected(self):
        cfgs = [tiny_config("softmax"), tiny_config("isomax", seeds=[5, 6])]
        with pytest.raises(ContractViolation):
            compare_heads(cfgs)

    def test_supplied_reports_must_match(self):
        cfgs = [tiny_config("softmax"), tiny_config("isomax")]
        reports = [run_experiment(cfgs[0])]
        with pytest.raises(ContractViolation):
            compare_heads(cfgs, reports)


class TestHistogramReport:
    def test_untrained_isomax_single_occupied_entropy_bin(self):
        state = make_train_state([2], "isomax", 3, seed=0)
        in_data = gaussian_blobs(3, 2, 4.0, 0.5, 10, seed=1)
        ood = ood_ring(8.0, 12.0, 20, seed=2)
        tables = histogram_report(state, in_data, ood, bins=10)
        rows = tables["entropy"]
        occupied = [r for r in rows if r[2] + r[3] > 0]
        assert len(occupied) == 1  # every entropy equals ln(3) at init
        left, right, count_in, count_out = occupied[0]
        assert left <= math.log(3.0) <= right
        assert count_in == 30 and count_out == 20

    def test_counts_sum_to_dataset_sizes(self):
        state, _, val, _, _ = train_single_seed(tiny_config(seeds=[1]), 1)
        ood = ood_ring(8.0, 12.0, 33, seed=5)
        tables = histogram_report(state, val, ood, bins=12)
        for rows in tables.values():
            assert sum(r[2] for r in rows) == len(val)
            assert sum(r[3] for r in rows) == 33

    def test_min_distance_table_only_for_distance_heads(self):
        state = make_train_state([2], "softmax", 3, seed=0)
        in_data = gaussian_blobs(3, 2, 4.0, 0.5, 10, seed=1)
        ood = ood_ring(8.0, 12.0, 20, seed=2)
        tables = histogram_report(state, in_data, ood, bins=5)
        assert "min_distance" not in tables
        assert "entropy" in tables

    def test_too_few_bins(self):
        state = make_train_state([2], "isomax", 3, seed=0)
        ds = gaussian_blobs(3, 2, 4.0, 0.5, 5, seed=1)
        with pytest.raises(ContractViolation):
            histogram_report(state, ds, ds, bins=1)

    def test_csv_format(self, tmp_path):
        path = tmp_path / "hist.csv"
        write_histogram_csv([(0.0, 0.5, 3, 1), (0.5, 1.0, 0, 2)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "bin_left,bin_right,count_in,count_out"
        assert lines[1] == "0.0,0.5,3,1"


class TestScoreDump:
    def test_csv_rows(self, tmp_path):
        path = tmp_path / "scores.csv"
        write_scores_csv(path, [1.5, 2.0], [-0.25])
        lines = path.read_text().splitlines()
        assert lines[0] == "score,group"
        assert lines[1:] == ["1.5,in", "2.0,in", "-0.25,out"]


class TestCheckpoints:
    def trained_state(self, head="isomaxplus"):
        state, _, val, _, _ = train_single_seed(tiny_config(head, seeds=[1]), 1)
        return state, val

    def test_round_trip_restores_bit_exact_inference(self, tmp_path):
        state, val = self.trained_state()
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        restored = load_checkpoint(path)
        f0 = backbone_forward(state.backbone, val.inputs)
        f1 = backbone_forward(restored.backbone, val.inputs)
        np.testing.assert_array_equal(f0, f1)
        np.testing.assert_array_equal(
            heads.inference_probabilities(state.head, f0),
            heads.inference_probabilities(restored.head, f1))
        assert restored.seed == state.seed
        assert restored.epoch == state.epoch

    def test_save_load_save_identical_bytes(self, tmp_path):
        state, _ = self.trained_state()
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(state, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_head_kind_is_typed_error(self, tmp_path):
        state, _ = self.trained_state("isomax")
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        with pytest.raises(CheckpointError, match="isomax"):
            load_checkpoint(path, expected_head_kind="softmax")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        state, _ = self.trained_state()
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        clipped = tmp_path / "short.bin"
        clipped.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(clipped)

    def test_hash_mismatch_warns_but_loads(self, tmp_path):
        state, _ = self.trained_state()
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        with pytest.warns(UserWarning, match="hash"):
            load_checkpoint(path, expected_config_hash=b"\xff" * 32)

    def test_softmax_round_trip(self, tmp_path):
        state, val = self.trained_state("softmax")
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        restored = load_checkpoint(path)
        f = backbone_forward(state.backbone, val.inputs)
        np.testing.assert_array_equal(heads.predict(state.head, f),
                                      heads.predict(restored.head, f))
