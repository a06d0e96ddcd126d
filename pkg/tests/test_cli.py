import csv
import json

import pytest

from src.main import build_parser, main, subset_list

SHORT = ["--duration", "8", "--seed", "3"]


@pytest.fixture(scope="module")
def fingers_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fingers4")
    assert main(["synth", "--preset", "fingers4", "--trials", "6", *SHORT, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def fingers_holdout(tmp_path_factory):
    out = tmp_path_factory.mktemp("fingers4-holdout")
    assert main(["synth", "--preset", "fingers4", "--trials", "4", "--duration", "8", "--seed", "21", "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_writes_manifest_and_trials(self, fingers_dir):
        manifest = json.loads((fingers_dir / "manifest.json").read_text())
        assert manifest["documentType"] == "dataset-manifest"
        assert len(manifest["channels"]) == 6
        assert len(manifest["trials"]) == 24
        assert (fingers_dir / "c00-r000.csv").is_file()

    def test_prints_summary(self, tmp_path, capsys):
        main(["synth", "--preset", "knee2", "--trials", "2", *SHORT, "--out", str(tmp_path)])
        assert capsys.readouterr().out.startswith("synth: 4 trials, 2 classes, 3 channels, seed 3")

    def test_run_record_is_reproducible(self, tmp_path):
        args = ["synth", "--preset", "knee2", "--trials", "2", *SHORT, "--out", str(tmp_path)]
        main(args)
        first = (tmp_path / "run.json").read_bytes()
        main([*args, "--jobs", "2"])
        assert (tmp_path / "run.json").read_bytes() == first
        record = json.loads(first)
        assert record["documentType"] == "run-record"
        assert "jobs" not in record["settings"]
        assert len(record["derivedSeeds"]) == 4

    def test_unknown_preset_exits_2(self, tmp_path, capsys):
        assert main(["synth", "--preset", "toes9", "--out", str(tmp_path)]) == 2
        assert "available presets" in capsys.readouterr().err

    def test_duration_too_short_for_burst_exits_2(self, tmp_path):
        assert main(["synth", "--preset", "knee2", "--duration", "4", "--out", str(tmp_path)]) == 2


class TestSearch:
    def test_full_search_on_six_channels(self, fingers_dir, tmp_path):
        out = tmp_path / "search"
        code = main(
            ["search", str(fingers_dir), "--repeats", "1", "--train-fraction", "0.5", "--out", str(out)]
        )
        assert code == 0
        with open(out / "results.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 63
        assert rows[0]["subset"] == "0"
        assert rows[-1]["subset"] == "0;1;2;3;4;5"
        frontier = (out / "frontier.csv").read_text().splitlines()
        assert len(frontier) == 7
        assert "Global best" in (out / "summary.txt").read_text()
        seeds = json.loads((out / "run.json").read_text())["derivedSeeds"]
        assert set(seeds["0;0;0"]) == {"split", "svm"}
        assert "0,1,2,3,4,5;5;0" in seeds

    def test_whitelist(self, fingers_dir, tmp_path):
        out = tmp_path / "search"
        main(["search", str(fingers_dir), "--subsets", "2,3;1,4", "--repeats", "1", "--out", str(out)])
        with open(out / "results.csv", newline="") as f:
            assert [r["subset"] for r in csv.DictReader(f)] == ["1;4", "2;3"]

    def test_max_k_zero_is_a_usage_error(self, fingers_dir, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["search", str(fingers_dir), "--max-k", "0", "--out", str(tmp_path)])
        assert excinfo.value.code == 2

    def test_max_k_beyond_channels_exits_2(self, fingers_dir, tmp_path):
        assert main(["search", str(fingers_dir), "--max-k", "7", "--out", str(tmp_path)]) == 2

    def test_missing_dataset_exits_3(self, tmp_path):
        assert main(["search", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 3


class TestTrainEval:
    @pytest.fixture(scope="class")
    def model_dir(self, fingers_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("model")
        assert main(["train", str(fingers_dir), "--subset", "1,2,3,4", "--out", str(out)]) == 0
        return out

    def test_model_document(self, model_dir):
        document = json.loads((model_dir / "model.json").read_text())
        assert document["documentType"] == "svm-model"
        assert document["context"]["subset"] == [1, 2, 3, 4]
        assert document["context"]["normalizer"] == 1
        assert len(document["model"]["binaries"]) == 6

    def test_holdout_accuracy(self, model_dir, fingers_holdout, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", str(fingers_holdout), "--model", str(model_dir / "model.json"), "--out", str(out)]) == 0
        record = json.loads((out / "run.json").read_text())
        assert record["accuracy"] >= 0.95
        assert sum(map(sum, record["confusion"])) == 16

    def test_channel_mismatch_exits_3(self, model_dir, tmp_path):
        knee = tmp_path / "knee"
        main(["synth", "--preset", "knee2", "--trials", "2", *SHORT, "--out", str(knee)])
        code = main(["eval", str(knee), "--model", str(model_dir / "model.json"), "--out", str(tmp_path / "e")])
        assert code == 3

    def test_missing_model_exits_2(self, fingers_dir, tmp_path):
        assert main(["eval", str(fingers_dir), "--model", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


class TestOtherCommands:
    def test_features(self, fingers_dir, tmp_path):
        assert main(["features", str(fingers_dir), "--subset", "0,2,5", "--normalizer", "2", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "features.csv").read_text().splitlines()
        assert lines[0] == "trial_id,normalizer,f0,f1,label"
        assert len(lines) == 25

    def test_preprocess(self, fingers_dir, tmp_path, capsys):
        assert main(["preprocess", str(fingers_dir), "--trial", "c01-r002", "--out", str(tmp_path)]) == 0
        header = (tmp_path / "c01-r002-rms.csv").read_text().splitlines()[0]
        assert header == "t,ch0,ch1,ch2,ch3,ch4,ch5"
        assert "peak" in capsys.readouterr().out

    def test_preprocess_unknown_trial_exits_3(self, fingers_dir, tmp_path):
        assert main(["preprocess", str(fingers_dir), "--trial", "nope", "--out", str(tmp_path)]) == 3

    def test_cross_eval_over_three_postures(self, tmp_path):
        for posture in ("0", "90", "180"):
            main(
                ["synth", "--preset", "fingers5-posture", "--posture", posture, "--trials", "4",
                 *SHORT, "--out", str(tmp_path / f"p{posture}")]
            )
        out = tmp_path / "cross"
        datasets = [str(tmp_path / f"p{posture}") for posture in ("0", "90", "180")]
        code = main(["cross-eval", *datasets, "--names", "p0,p90,p180", "--out", str(out)])
        assert code == 0
        lines = (out / "cross.csv").read_text().splitlines()
        assert lines[0] == "train,p0,p90,p180"
        assert [line.split(",")[0] for line in lines[1:]] == ["p0", "p90", "p180"]
        matrix = [[float(v) for v in line.split(",")[1:]] for line in lines[1:]]
        for i, row in enumerate(matrix):
            assert row[i] == max(row)

        record = json.loads((out / "run.json").read_text())
        assert record["settings"]["datasets"] == datasets
        assert set(record["derivedSeeds"]) == {"svm"}

    def test_cross_eval_name_count_exits_2(self, tmp_path):
        assert main(["cross-eval", str(tmp_path), "--names", "a,b", "--out", str(tmp_path)]) == 2


def test_subset_list_parsing():
    assert subset_list("0,1;2,3") == ((0, 1), (2, 3))


def test_every_command_is_registered():
    parser = build_parser()
    for command in ("synth", "preprocess", "features", "train", "eval", "search", "cross-eval"):
        assert parser.parse_args([command, *_minimal(command)]).command == command


def _minimal(command):
    return {
        "synth": ["--preset", "fingers4"],
        "eval": ["data", "--model", "m.json"],
        "cross-eval": ["a", "b"],
    }.get(command, ["data"])
