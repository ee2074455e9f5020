import json
import subprocess
import sys

import numpy as np
import pytest

import dualproto.harness as harness
from dualproto import SynthConfig, generate_synthetic, write_classtext, write_stream
from dualproto.cli import EXIT_DATA, EXIT_GRADCHECK, EXIT_OK, EXIT_USAGE, load_config_file, main
from dualproto.engine import EngineConfig
from dualproto.errors import ConfigInvalid, LabelMissing
from dualproto.harness import (
    GradcheckResult,
    PRESETS,
    ablate,
    evaluate,
    gradcheck,
    inspect_file,
    parse_grid_file,
    parse_report,
    plot_report,
    reports_equivalent,
)
from dualproto.stream_io import TestSample, read_stream


@pytest.fixture(scope="module")
def tiny_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = SynthConfig(classes=4, dim=16, samples=60, views=3, shift_angle=0.3,
                      sample_noise=0.15, seed=13)
    cts, samples, labels = generate_synthetic(cfg)
    classtext, stream = str(root / "t.dpec"), str(root / "t.dpes")
    write_classtext(classtext, cts)
    write_stream(stream, samples)
    return {"classtext": classtext, "stream": stream, "labels": labels}


def quick_config(**over):
    base = dict(temperature=0.1, rho=0.5)
    base.update(over)
    return EngineConfig(**base)


class TestEvaluate:
    def test_noiseless_stream_is_perfect(self, tmp_path):
        cfg = SynthConfig(classes=3, dim=8, samples=20, views=2, shift_angle=0.0,
                          sample_noise=0.0, view_noise=0.0, prompts_per_class=1,
                          prompt_noise=0.0, seed=1)
        cts, samples, _ = generate_synthetic(cfg)
        cpath, spath = str(tmp_path / "n.dpec"), str(tmp_path / "n.dpes")
        write_classtext(cpath, cts)
        write_stream(spath, samples)
        report = evaluate(spath, cpath, quick_config())
        assert report.accuracy == 1.0

    def test_report_text_round_trip(self, tiny_files):
        report = evaluate(tiny_files["stream"], tiny_files["classtext"],
                          quick_config(), window=25)
        data = parse_report(report.to_text())
        assert data["n_samples"] == 60
        assert data["accuracy"] == report.accuracy
        assert data["window_size"] == 25
        assert len(data["windowed_accuracy"]) == 3  # 25 + 25 + 10
        assert data["config.temperature"] == 0.1
        assert len(data["per_class_accuracy"]) == 4

    def test_windows_partition_totals(self, tiny_files):
        report = evaluate(tiny_files["stream"], tiny_files["classtext"],
                          quick_config(), window=25)
        sizes = [25, 25, 10]
        recombined = sum(w * s for w, s in zip(report.windowed_accuracy, sizes)) / 60
        assert recombined == pytest.approx(report.accuracy)

    def test_rerun_is_equivalent_modulo_timing(self, tiny_files):
        a = evaluate(tiny_files["stream"], tiny_files["classtext"], quick_config())
        b = evaluate(tiny_files["stream"], tiny_files["classtext"], quick_config())
        assert reports_equivalent(a.to_text(), b.to_text())

    def test_unlabeled_stream_rejected(self, tmp_path, tiny_files):
        samples = read_stream(tiny_files["stream"])
        stripped = [TestSample(views=s.views) for s in samples]
        spath = str(tmp_path / "u.dpes")
        write_stream(spath, stripped)
        with pytest.raises(LabelMissing):
            evaluate(spath, tiny_files["classtext"], quick_config())

    def test_zero_shot_arm_matches_oracle_script(self, tiny_files):
        config = quick_config(enable_vpe=False, enable_tpe=False, enable_prl=False)
        report = evaluate(tiny_files["stream"], tiny_files["classtext"], config)

        # independent zero-shot pipeline: textual cosine softmax per view,
        # lowest-entropy-half average, argmax
        from dualproto.stream_io import read_classtext

        cts = read_classtext(tiny_files["classtext"])
        protos = np.stack([e.mean(axis=0) for e in cts.embeddings])
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        correct = 0
        for sample, label in zip(read_stream(tiny_files["stream"]),
                                 tiny_files["labels"]):
            probs = []
            for view in sample.views:
                z = protos @ view / 0.1
                z -= z.max()
                e = np.exp(z)
                probs.append(e / e.sum())
            ents = [-(p[p > 0] * np.log(p[p > 0])).sum() for p in probs]
            k = max(1, int(np.floor(0.5 * len(probs) + 1e-9)))
            chosen = sorted(range(len(probs)), key=lambda i: (ents[i], i))[:k]
            mean = np.mean([probs[i] for i in chosen], axis=0)
            correct += int(np.argmax(mean)) == label
        assert report.accuracy == pytest.approx(correct / 60)


class TestAblate:
    def test_single_arm_equals_evaluate(self, tiny_files):
        config = quick_config()
        solo = evaluate(tiny_files["stream"], tiny_files["classtext"], config)
        grid = ablate(tiny_files["stream"], tiny_files["classtext"], config,
                      [("only", {})])
        assert grid.accuracy("only") == solo.accuracy
        assert grid.ranking == [("only", solo.accuracy)]

    def test_failures_do_not_cascade(self, tiny_files):
        grid = ablate(
            tiny_files["stream"], tiny_files["classtext"], quick_config(),
            [("good", {}), ("bad", {"update_rule": "bogus"})],
        )
        assert [n for n, _ in grid.arms] == ["good"]
        assert grid.failures and grid.failures[0][0] == "bad"

    def test_presets_exist(self):
        for name in ("components", "update-rules", "lambda", "queue-size",
                     "steps", "affinity"):
            assert PRESETS[name]

    def test_grid_file_parsing(self, tmp_path):
        path = tmp_path / "grid.txt"
        path.write_text(
            "# comment\nfull\nno-vpe enable_vpe=false\nsoft lam=0.25 temperature=0.2\n"
        )
        arms = parse_grid_file(str(path))
        assert arms == [
            ("full", {}),
            ("no-vpe", {"enable_vpe": "false"}),
            ("soft", {"lam": "0.25", "temperature": "0.2"}),
        ]

    def test_report_text_contains_arms_and_ranking(self, tiny_files):
        grid = ablate(tiny_files["stream"], tiny_files["classtext"], quick_config(),
                      [("a", {}), ("b", {"alpha": 0.0})])
        text = grid.to_text()
        data = parse_report(text)
        assert data["n_arms"] == 2
        assert "[arm a]" in text and "[arm b]" in text
        ranking = data["ranking"]
        assert len(ranking) == 2 and ranking[0][1] >= ranking[1][1]


class TestGradcheck:
    def test_small_run_passes(self):
        result = gradcheck(trials=5, seed=3)
        assert result.passed and result.max_rel_error < 1e-3

    def test_reproducible(self):
        a = gradcheck(trials=3, seed=11)
        b = gradcheck(trials=3, seed=11)
        assert a.max_rel_error == b.max_rel_error

    def test_detector_trips_on_perturbed_gradient(self):
        result = gradcheck(trials=3, seed=3, _perturb=1e-2)
        assert not result.passed

    def test_text_summary(self):
        result = gradcheck(trials=2, seed=0)
        assert "PASS" in result.to_text()


class TestPlot(object):
    def test_emits_svgs(self, tiny_files, tmp_path):
        report = evaluate(tiny_files["stream"], tiny_files["classtext"],
                          quick_config(), window=20)
        out = plot_report(report.to_text(), str(tmp_path / "charts"))
        assert len(out) == 2
        for path in out:
            body = open(path).read()
            assert body.startswith("<svg") and "polyline" in body


class TestInspect:
    def test_classtext_and_stream(self, tiny_files):
        text = inspect_file(tiny_files["classtext"])
        assert '"classtext"' in text and "classes = 4" in text
        text = inspect_file(tiny_files["stream"])
        assert '"stream"' in text and "samples = 60" in text and "labels = true" in text

    def test_checkpoint(self, tiny_files, tmp_path):
        from dualproto.engine import Engine
        from dualproto.stream_io import read_classtext

        engine = Engine(read_classtext(tiny_files["classtext"]), quick_config())
        path = str(tmp_path / "s.dpek")
        engine.save_checkpoint(path)
        assert '"checkpoint"' in inspect_file(path)

    def test_unknown_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"WHAT????")
        from dualproto.errors import BadMagic

        with pytest.raises(BadMagic):
            inspect_file(str(path))


class TestConfigFile:
    def test_parse_and_comments(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text(
            "temperature = 0.05  # sharp\nenable_vpe = false\nqueue_capacity = 5\n"
            "\n# full-line comment\nupdate_rule = exponential_avg\n"
        )
        cfg = load_config_file(str(path))
        assert cfg.temperature == 0.05
        assert cfg.enable_vpe is False
        assert cfg.queue_capacity == 5
        assert cfg.update_rule == "exponential_avg"

    def test_unknown_key_is_error(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("tempature = 0.05\n")
        with pytest.raises(ConfigInvalid):
            load_config_file(str(path))

    def test_bad_line_is_error(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("temperature 0.05\n")
        with pytest.raises(ConfigInvalid):
            load_config_file(str(path))


class TestCli:
    def run_cli(self, *argv):
        return subprocess.run(
            [sys.executable, "-m", "dualproto.cli", *argv],
            capture_output=True, text=True,
        )

    def test_synth_run_inspect_plot_pipeline(self, tmp_path):
        prefix = str(tmp_path / "demo")
        out = self.run_cli(
            "synth", "--classes", "4", "--dim", "16", "--samples", "40",
            "--views", "3", "--shift", "0.3", "--noise", "0.15",
            "--seed", "5", "--out-prefix", prefix,
        )
        assert out.returncode == EXIT_OK, out.stderr

        report_path = str(tmp_path / "report.txt")
        out = self.run_cli(
            "run", "--stream", prefix + ".dpes", "--classtext", prefix + ".dpec",
            "--set", "temperature=0.1", "--set", "rho=0.5",
            "--report", report_path, "--window", "20",
        )
        assert out.returncode == EXIT_OK, out.stderr
        data = parse_report(open(report_path).read())
        assert data["n_samples"] == 40

        out = self.run_cli("inspect", prefix + ".dpes", prefix + ".dpec")
        assert out.returncode == EXIT_OK and "stream" in out.stdout

        out = self.run_cli("plot", "--report", report_path,
                           "--out-prefix", str(tmp_path / "viz"))
        assert out.returncode == EXIT_OK
        assert (tmp_path / "viz_accuracy.svg").exists()

    def test_ablate_preset(self, tmp_path):
        prefix = str(tmp_path / "demo")
        self.run_cli(
            "synth", "--classes", "3", "--dim", "8", "--samples", "20",
            "--views", "2", "--noise", "0.1", "--seed", "2", "--out-prefix", prefix,
        )
        report_path = str(tmp_path / "ablation.txt")
        out = self.run_cli(
            "ablate", "--stream", prefix + ".dpes", "--classtext", prefix + ".dpec",
            "--preset", "components", "--set", "temperature=0.1",
            "--report", report_path,
        )
        assert out.returncode == EXIT_OK, out.stderr
        data = parse_report(open(report_path).read())
        assert data["n_arms"] == 5

    def test_missing_file_exits_data(self, tmp_path):
        out = self.run_cli(
            "run", "--stream", str(tmp_path / "none.dpes"),
            "--classtext", str(tmp_path / "none.dpec"),
        )
        assert out.returncode == EXIT_DATA

    def test_bad_flag_exits_usage(self):
        out = self.run_cli("run", "--no-such-flag")
        assert out.returncode == EXIT_USAGE

    def test_unknown_config_key_exits_data(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("tempature = 1\n")
        out = self.run_cli(
            "run", "--stream", "x.dpes", "--classtext", "x.dpec",
            "--config", str(cfg),
        )
        assert out.returncode == EXIT_DATA

    def test_gradcheck_cli_pass_and_fail(self, monkeypatch, capsys):
        assert main(["gradcheck", "--trials", "2", "--seed", "0"]) == EXIT_OK
        monkeypatch.setattr(
            harness, "gradcheck",
            lambda trials, seed: GradcheckResult(trials, 1e-3, 1.0, 0, False),
        )
        assert main(["gradcheck", "--trials", "2"]) == EXIT_GRADCHECK
