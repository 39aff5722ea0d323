import json
import sys

import numpy as np
import pytest

from fusekit.cli import main
from fusekit.datasets import write_prediction_set
from fusekit.evaluation import PredictionSet
from fusekit.fixtures import checkpoint_pair, prediction_sets
from fusekit.fusion import fuse_pair
from fusekit.tensor_store import Checkpoint, read_archive, write_archive

from conftest import random_compatible_pair


def run(args):
    return main([str(a) for a in args])


def write_pair(rng, tmp_path):
    a, b = random_compatible_pair(rng)
    pa, pb = tmp_path / "a.fta", tmp_path / "b.fta"
    write_archive(a, pa)
    write_archive(b, pb)
    return a, b, pa, pb


def dump_labels(directory, maps, num_classes=5):
    ids = [f"img{i}" for i in range(len(maps))]
    write_prediction_set(directory, PredictionSet(labels=list(maps)), ids, num_classes)


class TestFuseCommand:
    def test_fuses_to_output(self, rng, tmp_path, capsys):
        a, b, pa, pb = write_pair(rng, tmp_path)
        out = tmp_path / "fused.fta"
        assert run(["fuse", pa, pb, "--alpha", 0.25, "-o", out]) == 0
        assert read_archive(out) == fuse_pair(a, b, 0.25)
        report = json.loads(capsys.readouterr().out)
        assert report["alpha"] == 0.25
        assert report["beta"] == 0.75

    def test_report_file(self, rng, tmp_path):
        _, _, pa, pb = write_pair(rng, tmp_path)
        out = tmp_path / "fused.fta"
        rpt = tmp_path / "report.json"
        assert run(["fuse", pa, pb, "--alpha", 0.5, "-o", out, "--report", rpt]) == 0
        report = json.loads(rpt.read_text())
        assert report["config"]["alpha"] == 0.5

    def test_missing_input_exits_2(self, tmp_path, capsys):
        out = tmp_path / "fused.fta"
        code = run(["fuse", tmp_path / "no.fta", tmp_path / "nope.fta",
                    "--alpha", 0.5, "-o", out])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_corrupt_input_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.fta"
        bad.write_bytes(b"\x00\x01")
        code = run(["fuse", bad, bad, "--alpha", 0.5, "-o", tmp_path / "o.fta"])
        assert code == 1

    def test_alpha_out_of_range_exits_1(self, rng, tmp_path):
        _, _, pa, pb = write_pair(rng, tmp_path)
        assert run(["fuse", pa, pb, "--alpha", 2.0, "-o", tmp_path / "o.fta"]) == 1

    def test_bad_usage_exits_2(self, capsys):
        assert run(["fuse"]) == 2

    def test_unknown_subcommand_exits_2(self, capsys):
        assert run(["frobnicate"]) == 2


class TestSwaCommand:
    def test_two_way_average(self, rng, tmp_path, capsys):
        a, b, pa, pb = write_pair(rng, tmp_path)
        out = tmp_path / "swa.fta"
        assert run(["swa", pa, pb, "-o", out]) == 0
        assert read_archive(out) == fuse_pair(a, b, 0.5)
        report = json.loads(capsys.readouterr().out)
        assert report["coefficients"] == [0.5, 0.5]


class TestCossimCommand:
    def test_reports_planted_value(self, tmp_path, capsys):
        a, b = checkpoint_pair(0.5)
        write_archive(a, tmp_path / "a.fta")
        write_archive(b, tmp_path / "b.fta")
        rpt = tmp_path / "r.json"
        code = run(["cossim", tmp_path / "a.fta", tmp_path / "b.fta", "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        assert report["cosine"] == pytest.approx(0.5, abs=1e-9)
        assert report["low_similarity_warning"] is True
        assert "unlikely to beat" in capsys.readouterr().out

    def test_no_warning_above_threshold(self, tmp_path, capsys):
        a, b = checkpoint_pair(0.95)
        write_archive(a, tmp_path / "a.fta")
        write_archive(b, tmp_path / "b.fta")
        assert run(["cossim", tmp_path / "a.fta", tmp_path / "b.fta"]) == 0
        out = capsys.readouterr().out
        assert "unlikely to beat" not in out
        assert '"low_similarity_warning": false' in out


class TestMetricsAndOracle:
    def test_metrics_values(self, tmp_path, capsys):
        gt = np.array([[0, 0, 0, 1, 1, 1]], dtype=np.uint16)
        pred = np.array([[0, 0, 1, 0, 1, 1]], dtype=np.uint16)
        dump_labels(tmp_path / "gt", [gt], num_classes=2)
        dump_labels(tmp_path / "pred", [pred], num_classes=2)
        rpt = tmp_path / "r.json"
        code = run(["metrics", "--pred", tmp_path / "pred", "--gt", tmp_path / "gt",
                    "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        assert report["metrics"]["miou"] == pytest.approx(0.5)
        assert report["valid_pixels"] == 6

    def test_oracle_beats_singles(self, tmp_path):
        gt, preds = prediction_sets([0.5, 0.5], overlap=0.25, height=16, width=16)
        dump_labels(tmp_path / "gt", [gt])
        dump_labels(tmp_path / "m0", [preds[0]])
        dump_labels(tmp_path / "m1", [preds[1]])
        rpt = tmp_path / "r.json"
        code = run(["oracle", "--pred", tmp_path / "m0", "--pred", tmp_path / "m1",
                    "--gt", tmp_path / "gt", "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        # union accuracy 0.5 + 0.5 - 0.25
        assert report["oracle"]["pixel_accuracy"] == pytest.approx(0.75)

    def test_missing_dataset_exits_2(self, tmp_path):
        code = run(["metrics", "--pred", tmp_path / "nope", "--gt", tmp_path / "nope"])
        assert code == 2


class TestCalibrateCommand:
    def test_reports_ece(self, tmp_path):
        n = 8
        conf = np.full((1, n), 0.875, dtype=np.float32)
        labels = np.zeros((1, n), dtype=np.uint16)
        gt = np.array([[0] * 6 + [1] * 2], dtype=np.uint16)
        write_prediction_set(
            tmp_path / "pred",
            PredictionSet(labels=[labels], confidence=[conf]),
            ["img0"], 2,
        )
        dump_labels(tmp_path / "gt", [gt], num_classes=2)
        rpt = tmp_path / "r.json"
        code = run(["calibrate", "--pred", tmp_path / "pred", "--gt", tmp_path / "gt",
                    "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        assert report["ece"] == pytest.approx(0.0125, abs=1e-9)
        assert report["mce"] == pytest.approx(0.125, abs=1e-9)

    def test_missing_confidence_exits_2(self, tmp_path):
        gt = np.zeros((2, 2), dtype=np.uint16)
        dump_labels(tmp_path / "pred", [gt], num_classes=2)
        dump_labels(tmp_path / "gt", [gt], num_classes=2)
        code = run(["calibrate", "--pred", tmp_path / "pred", "--gt", tmp_path / "gt"])
        assert code == 2


class TestEnsembleCommand:
    def _dump_probs(self, directory, probs):
        probs = np.asarray(probs, dtype=np.float32)
        ps = PredictionSet(
            labels=[probs.argmax(axis=0).astype(np.uint16)],
            confidence=[probs.max(axis=0)],
            probs=[probs],
        )
        write_prediction_set(directory, ps, ["img0"], probs.shape[0])

    def test_averages_members(self, tmp_path):
        self._dump_probs(tmp_path / "m0", [[[0.8]], [[0.2]]])
        self._dump_probs(tmp_path / "m1", [[[0.4]], [[0.6]]])
        out = tmp_path / "avg"
        code = run(["ensemble", "--pred", tmp_path / "m0", "--pred", tmp_path / "m1",
                    "-o", out])
        assert code == 0
        avg = read_archive(out / "img0.fta")
        np.testing.assert_allclose(avg["probs"][:, 0, 0], [0.6, 0.4], atol=1e-7)
        assert avg["labels"][0, 0] == 0


class TestSearchCommand:
    def test_table_grid_search(self, rng, tmp_path):
        _, _, pa, pb = write_pair(rng, tmp_path)
        table = tmp_path / "scores.csv"
        lines = ["alpha,score"]
        for i in range(21):
            alpha = i / 20
            lines.append(f"{alpha},{-(alpha - 0.3) ** 2}")
        table.write_text("\n".join(lines) + "\n")
        rpt = tmp_path / "r.json"
        code = run(["search", pa, pb, "--table", table, "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        assert report["search"]["best"][0] == pytest.approx(0.3)
        assert len(report["search"]["evaluations"]) == 21

    def test_command_search_three_weights(self, rng, tmp_path):
        base, extra, pa, pb = write_pair(rng, tmp_path)
        third = Checkpoint({n: np.asarray(rng.standard_normal(t.shape), dtype=t.dtype)
                            for n, t in base.items()})
        pc = tmp_path / "c.fta"
        write_archive(third, pc)
        command = (
            f"{sys.executable} -c \"import sys, os; "
            f"print(os.path.getsize(sys.argv[1]))\" {{checkpoint}}"
        )
        rpt = tmp_path / "r.json"
        code = run(["search", pa, pb, pc, "--command", command,
                    "--trials", 3, "--workdir", tmp_path / "work", "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        assert len(report["search"]["evaluations"]) == 3
        np.testing.assert_allclose(
            report["search"]["evaluations"][0]["coefficients"], [1 / 3] * 3
        )

    def test_no_score_source_exits_2(self, rng, tmp_path, capsys):
        _, _, pa, pb = write_pair(rng, tmp_path)
        assert run(["search", pa, pb]) == 2

    def test_both_sources_exits_2(self, rng, tmp_path):
        _, _, pa, pb = write_pair(rng, tmp_path)
        code = run(["search", pa, pb, "--table", pa, "--command", "true"])
        assert code == 2

    def test_failing_command_exits_1(self, rng, tmp_path):
        _, _, pa, pb = write_pair(rng, tmp_path)
        code = run(["search", pa, pb, "--command", "false", "--step", 0.5])
        assert code == 1


class TestScheduleCommand:
    def test_eleven_checkpoints(self, tmp_path):
        out = tmp_path / "sched.csv"
        rpt = tmp_path / "r.json"
        epochs = ",".join(str(e) for e in range(11))
        code = run(["schedule", "--iterations-per-cycle", 100, "--cycles", 10,
                    "--checkpoint-epochs", epochs, "-o", out, "--report", rpt])
        assert code == 0
        report = json.loads(rpt.read_text())
        assert report["num_checkpoints"] == 11
        assert report["total_iterations"] == 1000
        assert out.read_text().count("\n") == 1001  # header + one row per iteration

    def test_bad_epoch_exits_1(self, tmp_path):
        code = run(["schedule", "--iterations-per-cycle", 10, "--cycles", 2,
                    "--checkpoint-epochs", "5", "-o", tmp_path / "s.csv"])
        assert code == 1


class TestGenFixturesCommand:
    def test_checkpoints_kind(self, tmp_path):
        out = tmp_path / "fix"
        code = run(["gen-fixtures", "checkpoints", "-o", out, "--cosine", 0.9])
        assert code == 0
        from fusekit.fusion import cosine_similarity

        a = read_archive(out / "a.fta")
        b = read_archive(out / "b.fta")
        assert cosine_similarity(a, b).cosine == pytest.approx(0.9, abs=1e-9)

    def test_predictions_kind(self, tmp_path):
        out = tmp_path / "fix"
        code = run(["gen-fixtures", "predictions", "-o", out,
                    "--fractions", "0.5,0.5", "--overlap", 0.25])
        assert code == 0
        assert (out / "gt" / "manifest.json").exists()
        assert (out / "model0" / "img0.fta").exists()
        assert (out / "model1" / "img0.fta").exists()


class TestThreadsEnv:
    def test_valid_cap_recorded(self, rng, tmp_path, monkeypatch):
        monkeypatch.setenv("FUSEKIT_THREADS", "2")
        _, _, pa, pb = write_pair(rng, tmp_path)
        rpt = tmp_path / "r.json"
        code = run(["fuse", pa, pb, "--alpha", 0.5, "-o", tmp_path / "o.fta",
                    "--report", rpt])
        assert code == 0
        assert json.loads(rpt.read_text())["config"]["threads"] == 2

    def test_invalid_cap_exits_2(self, rng, tmp_path, monkeypatch):
        monkeypatch.setenv("FUSEKIT_THREADS", "zero")
        _, _, pa, pb = write_pair(rng, tmp_path)
        code = run(["fuse", pa, pb, "--alpha", 0.5, "-o", tmp_path / "o.fta"])
        assert code == 2
