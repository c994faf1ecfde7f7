"""End-to-end command-line behavior, driven in-process through main()."""
import filecmp
import json

import pytest

from muka.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-data") / "complementary"
    code = run(
        "synth", "--preset", "complementary", "--out", out,
        "--seed", "42", "--samples", "8",
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def manifest(data_dir):
    return data_dir / "manifest.json"


class TestSynth:
    def test_writes_all_files(self, data_dir, capsys):
        names = sorted(p.name for p in data_dir.iterdir())
        assert names == [
            "coarse_audio.mkm",
            "coarse_head.mkm",
            "fine_audio.mkm",
            "fine_head.mkm",
            "manifest.json",
        ]

    def test_repeat_generation_is_byte_identical(self, tmp_path, data_dir):
        out = tmp_path / "again"
        assert run(
            "synth", "--preset", "complementary", "--out", out,
            "--seed", "42", "--samples", "8",
        ) == 0
        match, mismatch, errors = filecmp.cmpfiles(
            data_dir, out, [p.name for p in data_dir.iterdir()], shallow=False
        )
        assert not mismatch and not errors

    def test_bad_dims_is_a_validation_error(self, tmp_path, capsys):
        assert run("synth", "--preset", "aligned", "--out", tmp_path / "x",
                   "--dims", "16") == 1
        assert "--dims" in capsys.readouterr().err

    def test_odd_samples_rejected(self, tmp_path, capsys):
        assert run("synth", "--preset", "aligned", "--out", tmp_path / "x",
                   "--samples", "7") == 1


class TestValidate:
    def test_clean_dataset_passes(self, manifest, capsys):
        assert run("validate", "--manifest", manifest) == 0
        out = capsys.readouterr().out
        assert "[pass] manifest parses" in out
        assert "[fail]" not in out

    def test_corrupt_matrix_fails_a_check(self, tmp_path, manifest, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(manifest.parent, broken)
        blob = bytearray((broken / "fine_audio.mkm").read_bytes())
        blob[:4] = b"JUNK"
        (broken / "fine_audio.mkm").write_bytes(bytes(blob))
        assert run("validate", "--manifest", broken / "manifest.json") == 1
        assert "[fail]" in capsys.readouterr().out

    def test_unparseable_manifest(self, tmp_path, capsys):
        bad = tmp_path / "manifest.json"
        bad.write_text("{not json")
        assert run("validate", "--manifest", bad) == 1
        assert "[fail] manifest parses" in capsys.readouterr().out

    def test_missing_manifest_is_an_io_error(self, tmp_path):
        assert run("validate", "--manifest", tmp_path / "nope.json") == 2


class TestArgHandling:
    def test_help_exits_zero(self, capsys):
        assert run("--help") == 0
        assert "synth" in capsys.readouterr().out

    def test_version_exits_zero(self, capsys):
        assert run("--version") == 0

    def test_missing_required_flag(self, capsys):
        assert run("eval", "--method", "muka") == 1

    def test_unknown_method_choice(self, manifest, capsys):
        assert run("eval", "--manifest", manifest, "--method", "boosting") == 1

    def test_no_subcommand(self, capsys):
        assert run() == 1


class TestEval:
    def test_summary_line_and_report(self, manifest, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = run(
            "eval", "--manifest", manifest, "--method", "muka",
            "--shots", "2", "--seeds", "0,1", "--out", out,
        )
        assert code == 0
        summary = capsys.readouterr().out
        assert "method=muka" in summary and "mean_accuracy=" in summary
        doc = json.loads(out.read_text())
        assert doc["shots"] == 2 and doc["seeds"] == [0, 1]
        assert len(doc["entries"]) == 2
        assert doc["normalization"] == "l2"

    def test_reports_are_byte_identical_across_runs(self, manifest, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        argv = ["eval", "--manifest", manifest, "--method", "proker",
                "--shots", "2", "--seeds", "0"]
        assert run(*argv, "--out", a) == 0
        assert run(*argv, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_verbose_prints_each_entry(self, manifest, capsys):
        assert run(
            "eval", "--manifest", manifest, "--method", "zeroshot",
            "--shots", "1", "--seeds", "0,1,2", "--verbose",
        ) == 0
        out = capsys.readouterr().out
        assert out.count("seed=") >= 3

    def test_per_space_beta_flag(self, manifest, tmp_path, capsys):
        out = tmp_path / "r.json"
        assert run(
            "eval", "--manifest", manifest, "--method", "muka", "--shots", "2",
            "--seeds", "0", "--beta", "fine=2,coarse=5", "--out", out,
        ) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["beta"] == {"fine": 2.0, "coarse": 5.0}

    def test_malformed_beta(self, manifest, capsys):
        assert run(
            "eval", "--manifest", manifest, "--method", "muka",
            "--beta", "fine=",
        ) == 1
        assert "beta" in capsys.readouterr().err

    def test_missing_dataset_is_an_io_error(self, tmp_path, capsys):
        assert run(
            "eval", "--manifest", tmp_path / "missing.json", "--method", "muka",
        ) == 2

    def test_diverging_probe_is_a_numerical_error(self, manifest, capsys):
        code = run(
            "eval", "--manifest", manifest, "--method", "linearprobe",
            "--shots", "2", "--seeds", "0", "--learning-rate", "1e12",
            "--epochs", "50",
        )
        assert code == 3
        assert "diverged" in capsys.readouterr().err

    def test_flat_config_file(self, manifest, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"alpha": 2.0, "beta": 4.0}))
        out = tmp_path / "r.json"
        assert run(
            "eval", "--manifest", manifest, "--method", "tip", "--shots", "2",
            "--seeds", "0", "--config", cfg, "--out", out,
        ) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["alpha"] == 2.0 and doc["config"]["beta"] == 4.0

    def test_inline_flag_overrides_config_file(self, manifest, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"alpha": 2.0}))
        out = tmp_path / "r.json"
        assert run(
            "eval", "--manifest", manifest, "--method", "tip", "--shots", "2",
            "--seeds", "0", "--config", cfg, "--alpha", "3.0", "--out", out,
        ) == 0
        assert json.loads(out.read_text())["config"]["alpha"] == 3.0

    def test_method_map_config_selects_the_right_block(self, manifest, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"tip": {"alpha": 4.0}, "proker": {"lam": 9.0}}))
        out = tmp_path / "r.json"
        assert run(
            "eval", "--manifest", manifest, "--method", "proker", "--shots", "2",
            "--seeds", "0", "--config", cfg, "--out", out,
        ) == 0
        assert json.loads(out.read_text())["config"]["lam"] == 9.0

    def test_config_file_with_bad_json(self, manifest, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("][")
        assert run(
            "eval", "--manifest", manifest, "--method", "tip", "--config", cfg,
        ) == 1


class TestTune:
    def test_writes_table_and_transfer_config(self, manifest, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({
            "alpha": [0.0, 1.0], "lambda": [1.0], "tau": [1.0], "beta": [1.0],
        }))
        table = tmp_path / "grid.csv"
        transfer = tmp_path / "best.json"
        code = run(
            "tune", "--manifest", manifest, "--methods", "zeroshot,tip,muka",
            "--shots", "2", "--seeds", "0", "--grid", grid,
            "--out-table", table, "--out-config", transfer,
        )
        assert code == 0
        header = table.read_text().splitlines()[0]
        assert header == "method,alpha,lambda,tau,beta_fine,beta_coarse,mean_accuracy"
        best = json.loads(transfer.read_text())
        assert set(best) == {"zeroshot", "tip", "muka"}
        out = capsys.readouterr().out
        assert out.count("best_config=") == 3

    def test_transfer_config_feeds_eval(self, manifest, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({
            "alpha": [1.0], "lambda": [0.5], "tau": [1.0], "beta": [2.0],
        }))
        transfer = tmp_path / "best.json"
        assert run(
            "tune", "--manifest", manifest, "--methods", "proker",
            "--shots", "2", "--seeds", "0", "--grid", grid,
            "--out-config", transfer,
        ) == 0
        out = tmp_path / "r.json"
        assert run(
            "eval", "--manifest", manifest, "--method", "proker", "--shots", "2",
            "--seeds", "0", "--config", transfer, "--out", out,
        ) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["lam"] == 0.5 and doc["config"]["beta"] == 2.0

    def test_unknown_grid_key_rejected(self, manifest, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"gamma": [1.0]}))
        assert run(
            "tune", "--manifest", manifest, "--methods", "tip", "--grid", grid,
        ) == 1
        assert "unknown keys" in capsys.readouterr().err


class TestAblate:
    def test_prints_four_rows_and_writes_json(self, manifest, tmp_path, capsys):
        out = tmp_path / "ablation.json"
        assert run(
            "ablate", "--manifest", manifest, "--shots", "2", "--seeds", "0",
            "--out", out,
        ) == 0
        printed = capsys.readouterr().out
        for row in ("row=a", "row=b", "row=c", "row=d"):
            assert row in printed
        assert "kernel=fine x coarse" in printed
        doc = json.loads(out.read_text())
        assert sorted(doc) == ["a", "b", "c", "d"]

    def test_single_space_dataset_is_a_validation_error(self, data_dir, tmp_path, capsys):
        doc = json.loads((data_dir / "manifest.json").read_text())
        doc["spaces"] = doc["spaces"][:1]
        solo = tmp_path / "solo"
        solo.mkdir()
        for name in ("fine_audio.mkm", "fine_head.mkm"):
            (solo / name).write_bytes((data_dir / name).read_bytes())
        (solo / "manifest.json").write_text(json.dumps(doc))
        assert run("ablate", "--manifest", solo / "manifest.json",
                   "--shots", "1", "--seeds", "0") == 1


class TestShotsCurve:
    def test_writes_the_curve_csv(self, manifest, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        assert run(
            "shots-curve", "--manifest", manifest, "--method", "muka",
            "--shots-list", "1,2,4", "--seeds", "0", "--out", out,
        ) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "shots,mean_accuracy"
        assert [l.split(",")[0] for l in lines[1:]] == ["1", "2", "4"]
        assert capsys.readouterr().out.count("mean_accuracy=") == 3

    def test_descending_list_rejected(self, manifest, capsys):
        assert run(
            "shots-curve", "--manifest", manifest, "--method", "muka",
            "--shots-list", "4,2",
        ) == 1
