import hashlib
import json

import pytest

from thumbseed import cli
from thumbseed.data import load_image
from thumbseed.model import load_model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    out = workdir / "data"
    code = cli.main([
        "gen-data", "--n", "12", "--n-test", "4", "--seed", "5",
        "--out", str(out), "--canvas", "96",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained(workdir, dataset):
    out = workdir / "run"
    code = cli.main([
        "train", "--data", str(dataset), "--out", str(out),
        "--steps", "12", "--seed", "5", "--resolution", "96",
        "--hidden", "16", "--gca-hidden", "4", "--checkpoint-every", "6",
    ])
    assert code == 0
    return out


class TestGenData:
    def test_outputs_and_manifest(self, dataset):
        assert (dataset / "manifest.json").exists()
        assert (dataset / "train" / "annotations.jsonl").exists()
        assert (dataset / "test" / "annotations.jsonl").exists()
        assert (dataset / "run_config.json").exists()
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert manifest["splits"]["train"]["count"] == 12
        assert manifest["splits"]["test"]["count"] == 4
        assert len(list((dataset / "train" / "images").glob("*.ppm"))) == 12

    def test_repeat_run_identical_manifest_checksum(self, workdir, dataset):
        out2 = workdir / "data2"
        code = cli.main([
            "gen-data", "--n", "12", "--n-test", "4", "--seed", "5",
            "--out", str(out2), "--canvas", "96",
        ])
        assert code == 0
        a = hashlib.sha256((dataset / "manifest.json").read_bytes()).hexdigest()
        b = hashlib.sha256((out2 / "manifest.json").read_bytes()).hexdigest()
        assert a == b
        img = "train/images/img_00003.ppm"
        assert (dataset / img).read_bytes() == (out2 / img).read_bytes()

    def test_zero_n_is_usage_error(self, workdir):
        assert cli.main(["gen-data", "--n", "0", "--out", str(workdir / "x")]) == 2

    def test_aspect_pool_override(self, workdir):
        out = workdir / "data125"
        code = cli.main([
            "gen-data", "--n", "2", "--n-test", "1", "--seed", "5",
            "--out", str(out), "--canvas", "96", "--aspects", "1.25",
        ])
        assert code == 0
        lines = (out / "train" / "annotations.jsonl").read_text().strip().splitlines()
        assert all(json.loads(l)["aspect_ratio"] == 1.25 for l in lines)


class TestTrain:
    def test_outputs(self, trained):
        assert (trained / "model.thmb").exists()
        assert (trained / "model.thmb.cfg").exists()
        assert (trained / "model_step_000006.thmb").exists()
        assert (trained / "loss_history.csv").exists()
        assert (trained / "loss_curve.png").exists()
        assert (trained / "run_config.json").exists()
        csv = (trained / "loss_history.csv").read_text().strip().splitlines()
        assert csv[0] == "step,total,cls,reg"
        assert len(csv) == 13

    def test_checkpoint_loadable(self, trained):
        params = load_model(trained / "model.thmb")
        assert params.config.resolution == 96

    def test_missing_dataset_is_usage_error(self, workdir):
        code = cli.main(["train", "--data", str(workdir / "nope"), "--out", str(workdir / "o")])
        assert code == 2

    def test_lambda_default_is_ten(self):
        parser = cli.build_parser()
        args = parser.parse_args(["train", "--data", "d", "--out", "o"])
        assert getattr(args, "lambda") == 10.0
        assert args.lr == 0.001
        assert args.steps <= 5000


class TestInfer:
    def test_thumbnail_written(self, workdir, dataset, trained):
        image = next((dataset / "test" / "images").glob("*.ppm"))
        out = workdir / "thumb.ppm"
        code = cli.main([
            "infer", "--checkpoint", str(trained / "model.thmb"), "--image", str(image),
            "--aspect", "1.0", "--out-size", "64x48", "--out", str(out),
        ])
        assert code == 0
        assert load_image(out).shape == (48, 64, 3)

    def test_unseen_aspect_runs(self, workdir, dataset, trained, capsys):
        image = next((dataset / "test" / "images").glob("*.ppm"))
        out = workdir / "thumb125.ppm"
        code = cli.main([
            "infer", "--checkpoint", str(trained / "model.thmb"), "--image", str(image),
            "--aspect", "1.25", "--out-size", "32x32", "--out", str(out),
        ])
        assert code == 0
        assert "score=" in capsys.readouterr().out

    def test_snap_gives_exact_aspect(self, workdir, dataset, trained, capsys):
        image = next((dataset / "test" / "images").glob("*.ppm"))
        out = workdir / "snap.ppm"
        code = cli.main([
            "infer", "--checkpoint", str(trained / "model.thmb"), "--image", str(image),
            "--aspect", "1.5", "--out-size", "48x32", "--out", str(out), "--snap",
        ])
        assert code == 0
        printed = capsys.readouterr().out
        aspect = float(printed.split("aspect=")[1].split()[0])
        assert abs(aspect - 1.5) < 1e-4  # printed with 4 decimals

    def test_aspect_out_of_range_exit2(self, workdir, trained):
        code = cli.main([
            "infer", "--checkpoint", str(trained / "model.thmb"), "--image", "x.ppm",
            "--aspect", "50.0", "--out-size", "32x32", "--out", str(workdir / "t.ppm"),
        ])
        assert code == 2

    def test_unreadable_checkpoint_exit4(self, workdir, dataset):
        image = next((dataset / "test" / "images").glob("*.ppm"))
        bad = workdir / "bad.thmb"
        bad.write_bytes(b"JUNKJUNKJUNK")
        (workdir / "bad.thmb.cfg").write_text("resolution=96\n")
        code = cli.main([
            "infer", "--checkpoint", str(bad), "--image", str(image),
            "--aspect", "1.0", "--out-size", "32x32", "--out", str(workdir / "t2.ppm"),
        ])
        assert code == 4

    def test_bad_out_size_exit2(self, workdir, trained):
        code = cli.main([
            "infer", "--checkpoint", str(trained / "model.thmb"), "--image", "x.ppm",
            "--aspect", "1.0", "--out-size", "64by64", "--out", str(workdir / "t3.ppm"),
        ])
        assert code == 2


class TestEval:
    def test_identity_oracle_reports_perfect(self, workdir, dataset, capsys):
        out = workdir / "eval_oracle"
        code = cli.main([
            "eval", "--data", str(dataset), "--out", str(out), "--identity-oracle",
        ])
        assert code == 0
        report = json.loads((out / "metrics.json").read_text())
        assert report["iou"] == 1.0 and report["co"] == 0.0 and report["arm"] == 0.0
        assert report["count"] == 4
        assert (out / "metrics.txt").exists()
        assert (out / "per_sample.csv").exists()
        assert (out / "metrics_hist.png").exists()
        assert "images_per_second=" in capsys.readouterr().out

    def test_trained_model_eval(self, workdir, dataset, trained):
        out = workdir / "eval_model"
        code = cli.main([
            "eval", "--checkpoint", str(trained / "model.thmb"),
            "--data", str(dataset), "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "metrics.json").read_text())
        assert report["count"] == 4
        rows = (out / "per_sample.csv").read_text().strip().splitlines()
        assert len(rows) == 5

    def test_checkpoint_required_without_oracle(self, workdir, dataset):
        code = cli.main(["eval", "--data", str(dataset), "--out", str(workdir / "e2")])
        assert code == 2


class TestGradcheckCommand:
    def test_passes_with_exit_zero(self, capsys):
        code = cli.main(["gradcheck", "--samples", "4"])
        out = capsys.readouterr().out
        assert code == 0
        assert "full_model" in out
        assert "PASS" in out and "FAIL" not in out

    def test_corrupted_backward_fails_naming_the_op(self, capsys, monkeypatch):
        import thumbseed.tensor as tensor_mod

        def bad_sigmoid_grad(y, g):
            return g * y  # wrong rule on purpose
        monkeypatch.setattr(tensor_mod, "_sigmoid_grad", bad_sigmoid_grad)
        code = cli.main(["gradcheck", "--samples", "4"])
        out = capsys.readouterr().out
        assert code == 1
        assert "FAIL" in out
        assert "lstm_step" in out.split("failing checks:")[1]


class TestDeterminism:
    def test_two_identical_runs_byte_identical(self, workdir, dataset):
        outs = []
        for name in ("det_a", "det_b"):
            run = workdir / name
            code = cli.main([
                "train", "--data", str(dataset), "--out", str(run),
                "--steps", "8", "--seed", "9", "--resolution", "96",
                "--hidden", "16", "--gca-hidden", "4",
            ])
            assert code == 0
            code = cli.main([
                "eval", "--checkpoint", str(run / "model.thmb"),
                "--data", str(dataset), "--out", str(run / "eval"),
            ])
            assert code == 0
            outs.append(run)
        a, b = outs
        for rel in ("model.thmb", "model.thmb.cfg", "loss_history.csv",
                    "eval/metrics.txt", "eval/metrics.json", "eval/per_sample.csv"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_usage_without_command_exits_2(capsys):
    assert cli.main([]) == 2


def test_version_flag(capsys):
    assert cli.main(["--version"]) == 0
    assert "thumbseed" in capsys.readouterr().out
