import numpy as np
import pytest

from foml import datasets, experiment
from foml.config import ConfigError, build_config
from foml.experiment import NumericFailure, resume_experiment, run_experiment, run_sweep

TINY = {
    "num_tasks": "3",
    "samples_per_task": "20",
    "base_items_per_class": "10",
    "hidden": "6",
    "K": "2",
    "seed": "7",
}


def tiny_config(tmp_path, name="run", **extra):
    overrides = dict(TINY)
    overrides["outdir"] = str(tmp_path / name)
    overrides.update({k: str(v) for k, v in extra.items()})
    return build_config("", overrides)


class TestRunExperiment:
    def test_fifty_six_task_run_emits_57_line_curve(self, tmp_path):
        cfg = tiny_config(tmp_path, num_tasks="56", K="3", hidden="8", base_items_per_class="10")
        result = run_experiment(cfg)
        lines = (tmp_path / "run" / "curve.csv").read_text().splitlines()
        assert len(lines) == 57
        assert result.summary["tasks"] == 56
        assert result.summary["steps"] == 56 * 2

    def test_artifacts_present(self, tmp_path):
        cfg = tiny_config(tmp_path)
        run_experiment(cfg)
        outdir = tmp_path / "run"
        for name in ("curve.csv", "steps.jsonl", "config.foml", "checkpoint.ckpt", "meta.json"):
            assert (outdir / name).exists(), name

    def test_identical_configs_give_identical_bytes(self, tmp_path):
        names = ("curve.csv", "steps.jsonl", "config.foml", "checkpoint.ckpt")
        r1 = run_experiment(tiny_config(tmp_path, name="a"))
        first = {n: (tmp_path / "a" / n).read_bytes() for n in names}
        r2 = run_experiment(tiny_config(tmp_path, name="a"))
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == first[name], f"{name} differs"
        assert r1.summary == r2.summary

    def test_different_seed_changes_results(self, tmp_path):
        run_experiment(tiny_config(tmp_path, name="a"))
        run_experiment(tiny_config(tmp_path, name="c", seed="8"))
        assert (tmp_path / "a" / "curve.csv").read_bytes() != (
            tmp_path / "c" / "curve.csv"
        ).read_bytes()

    @pytest.mark.parametrize("learner", ["tfs", "toe", "ftl", "ftml"])
    def test_baseline_learners_complete(self, tmp_path, learner):
        cfg = tiny_config(tmp_path, name=learner, learner=learner, updates_per_task="6", toe_base_updates="6")
        result = run_experiment(cfg)
        assert result.summary["tasks"] == 3

    def test_max_steps_truncates(self, tmp_path):
        cfg = tiny_config(tmp_path, max_steps="3")
        result = run_experiment(cfg)
        assert result.summary["steps"] == 3
        assert result.summary["tasks"] == 1  # only the first task completed

    def test_regret_series_emitted_when_enabled(self, tmp_path):
        cfg = tiny_config(tmp_path, compute_regret="true")
        result = run_experiment(cfg)
        assert len(result.record.regret_series) == 3

    def test_file_dataset_round_trip(self, tmp_path):
        images, labels = datasets.make_glyph_dataset(10, seed=0)
        path = tmp_path / "base.foml"
        datasets.save_dataset(path, images, labels)
        cfg = tiny_config(tmp_path, name="filerun", dataset=str(path))
        result = run_experiment(cfg)
        assert result.summary["tasks"] == 3

    def test_numeric_failure_writes_checkpoint_and_raises(self, tmp_path):
        cfg = tiny_config(
            tmp_path, name="blowup", optimizer="sgd", alpha1="1e200", beta1="0.01"
        )
        with pytest.raises(NumericFailure) as err:
            run_experiment(cfg)
        assert err.value.checkpoint_path is not None
        assert "checkpoint-failure" in err.value.checkpoint_path
        import json

        meta = json.loads((tmp_path / "blowup" / "meta.json").read_text())
        assert meta["status"] == "failed_numeric"

    def test_pair_stream_run(self, tmp_path):
        cfg = tiny_config(
            tmp_path,
            name="pair",
            stream="pair",
            arch="siamese7",
            filters="2,2,2,3,3,3,4",
            embedding_dim="4",
            num_tasks="2",
            samples_per_task="10",
            K="1",
        )
        result = run_experiment(cfg)
        assert result.summary["tasks"] == 2


class TestResume:
    def test_split_run_equals_straight_run(self, tmp_path):
        # one straight run writes a mid-stream checkpoint at step 3 of 6;
        # resuming that checkpoint into a fresh directory must reproduce the
        # straight run's outputs byte for byte
        straight = tiny_config(tmp_path, name="straight", checkpoint_every="3")
        run_experiment(straight)
        mid_ckpt = tmp_path / "straight" / "checkpoint-step3.ckpt"
        assert mid_ckpt.exists()

        resumed = resume_experiment(str(mid_ckpt), outdir=str(tmp_path / "resumed"))
        assert resumed.summary["tasks"] == 3

        straight_curve = (tmp_path / "straight" / "curve.csv").read_bytes()
        resumed_curve = (tmp_path / "resumed" / "curve.csv").read_bytes()
        assert straight_curve == resumed_curve
        straight_steps = (tmp_path / "straight" / "steps.jsonl").read_bytes()
        resumed_steps = (tmp_path / "resumed" / "steps.jsonl").read_bytes()
        assert straight_steps == resumed_steps

    def test_resume_respects_max_steps_continuation(self, tmp_path):
        # max_steps in the stored config also bounds the continued run
        cfg = tiny_config(tmp_path, name="m1", checkpoint_every="2", max_steps="4")
        run_experiment(cfg)
        resumed = resume_experiment(
            str(tmp_path / "m1" / "checkpoint-step2.ckpt"), outdir=str(tmp_path / "m2")
        )
        assert resumed.summary["steps"] == 4

    def test_resume_with_matching_config_accepted(self, tmp_path):
        cfg = tiny_config(tmp_path, name="ok", checkpoint_every="3")
        run_experiment(cfg)
        from foml.config import serialize_config

        resumed = resume_experiment(
            str(tmp_path / "ok" / "checkpoint-step3.ckpt"),
            config_text=serialize_config(cfg),
            outdir=str(tmp_path / "ok2"),
        )
        assert resumed.summary["steps"] == 6

    def test_resume_with_altered_beta1_refused(self, tmp_path):
        cfg = tiny_config(tmp_path, name="strict", checkpoint_every="3")
        run_experiment(cfg)
        altered = dict(TINY)
        altered["outdir"] = str(tmp_path / "strict")
        altered["beta1"] = "0.5"
        from foml.config import serialize_config

        with pytest.raises(ConfigError, match="hash mismatch"):
            resume_experiment(
                str(tmp_path / "strict" / "checkpoint-step3.ckpt"),
                config_text=serialize_config(build_config("", altered)),
                outdir=str(tmp_path / "strict2"),
            )


class TestSweep:
    def test_sweep_runs_and_summarizes(self, tmp_path):
        overrides = dict(TINY)
        rows = run_sweep("", overrides, "K", ["1", "2"], str(tmp_path / "sw"))
        assert [r["value"] for r in rows] == ["1", "2"]
        summary = (tmp_path / "sw" / "sweep_summary.csv").read_text().splitlines()
        assert summary[0] == "K,last10_mean_error,final_error"
        assert len(summary) == 3
        assert (tmp_path / "sw" / "K=1" / "curve.csv").exists()

    def test_sweep_unknown_param_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown sweep parameter"):
            run_sweep("", {}, "nonsense", ["1"], str(tmp_path / "sw2"))
