import csv
import json

import pytest

from motionlink.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_IO,
    EXIT_OK,
    EXIT_RESOURCE,
    RunConfig,
    main,
)
from motionlink.errors import ConfigError


def write_spec(path, **overrides):
    payload = {"num_identities": 6, "n_windows": 24, "window_seconds": 1.0, "seed": 5}
    payload.update(overrides)
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    """A small noiseless cohort written to disk, plus its file paths."""
    spec = write_spec(tmp_path / "spec.json")
    out = tmp_path / "data"
    assert main(["generate", "--spec", spec, "--out-dir", str(out)]) == EXIT_OK
    return {
        "spec": spec,
        "visual": str(out / "visual.jsonl"),
        "motion": str(out / "motion.jsonl"),
        "truth": str(out / "truth.json"),
    }


class TestVersionAndParsing:
    def test_version_lists_every_format(self, capsys):
        assert main(["--version"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("motionlink ")
        for name in ("series-jsonl", "rankings-jsonl", "truth-json",
                     "index-snapshot", "scaling-csv", "sweep-csv"):
            assert name in out

    def test_unknown_subcommand_is_config_error(self, capsys):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_missing_required_flag_is_config_error(self, capsys):
        assert main(["generate", "--spec", "x.json"]) == EXIT_CONFIG


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.w == 1.0
        assert cfg.t_norm == 0.30
        assert cfg.index_mode == "naive"
        assert cfg.restricted is False

    def test_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(w=0.0)
        with pytest.raises(ConfigError):
            RunConfig(t_norm=1.5)
        with pytest.raises(ConfigError):
            RunConfig(index_mode="fast")
        with pytest.raises(ConfigError):
            RunConfig(top_k=0)
        with pytest.raises(ConfigError):
            RunConfig(threads=0)


class TestGenerate:
    def test_summary_line(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "spec.json")
        assert main(["generate", "--spec", spec, "--out-dir", str(tmp_path / "d")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "p=6" in out and "q=6" in out and "k=24" in out

    def test_byte_identical_across_runs(self, tmp_path):
        spec = write_spec(tmp_path / "spec.json")
        for d in ("a", "b"):
            assert main(["generate", "--spec", spec, "--out-dir", str(tmp_path / d)]) == EXIT_OK
        for name in ("visual.jsonl", "motion.jsonl", "truth.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_prior_names_the_field(self, tmp_path, capsys):
        prior = {"idle": 0.9}  # nowhere near summing to 1
        spec = write_spec(tmp_path / "spec.json", activity_prior=prior)
        assert main(["generate", "--spec", spec, "--out-dir", str(tmp_path / "d")]) == EXIT_CONFIG
        assert "activity_prior" in capsys.readouterr().err

    def test_traces_layout(self, tmp_path):
        spec = write_spec(tmp_path / "spec.json", num_identities=2, n_windows=10)
        out = tmp_path / "d"
        assert main(["generate", "--spec", spec, "--out-dir", str(out), "--traces"]) == EXIT_OK
        assert sorted(p.name for p in (out / "motion").iterdir()) == ["u0000.csv", "u0001.csv"]
        assert sorted(p.name for p in (out / "keypoints").iterdir()) == ["a0000.jsonl", "a0001.jsonl"]
        assert (out / "truth.json").exists()


class TestCorrelate:
    def test_noiseless_cohort_ranks_perfectly(self, dataset, tmp_path, capsys):
        rank = tmp_path / "rank.jsonl"
        report = tmp_path / "report.json"
        rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                   "--out", str(rank), "--truth", dataset["truth"], "--report", str(report)])
        assert rc == EXIT_OK
        payload = json.loads(report.read_text())
        assert payload["top_1_rate"] == 1.0
        lines = rank.read_text().splitlines()
        assert len(lines) == 6
        assert all(json.loads(l)["ranking"] for l in lines)

    def test_naive_and_indexed_write_identical_files(self, dataset, tmp_path):
        outs = {}
        for mode in ("naive", "indexed"):
            out = tmp_path / f"{mode}.jsonl"
            rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                       "--out", str(out), "--t-norm", "0.1", "--index-mode", mode])
            assert rc == EXIT_OK
            outs[mode] = out.read_bytes()
        assert outs["naive"] == outs["indexed"]

    def test_thread_count_does_not_change_output(self, dataset, tmp_path):
        outs = []
        for threads in ("1", "3"):
            out = tmp_path / f"t{threads}.jsonl"
            rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                       "--out", str(out), "--threads", threads])
            assert rc == EXIT_OK
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_missing_motion_file_is_io_error(self, dataset, tmp_path):
        rc = main(["correlate", "--visual", dataset["visual"], "--motion",
                   str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "r.jsonl")])
        assert rc == EXIT_IO

    def test_length_mismatch_is_data_error_not_io(self, dataset, tmp_path):
        other_spec = write_spec(tmp_path / "other.json", n_windows=12)
        other = tmp_path / "other"
        assert main(["generate", "--spec", other_spec, "--out-dir", str(other)]) == EXIT_OK
        rc = main(["correlate", "--visual", dataset["visual"], "--motion",
                   str(other / "motion.jsonl"), "--out", str(tmp_path / "r.jsonl")])
        assert rc == EXIT_DATA

    def test_swapped_channels_is_data_error(self, dataset, tmp_path):
        rc = main(["correlate", "--visual", dataset["motion"], "--motion", dataset["visual"],
                   "--out", str(tmp_path / "r.jsonl")])
        assert rc == EXIT_DATA

    def test_w_must_match_dataset(self, dataset, tmp_path, capsys):
        rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                   "--out", str(tmp_path / "r.jsonl"), "-w", "2.0"])
        assert rc == EXIT_CONFIG
        assert "window" in capsys.readouterr().err

    def test_restricted_with_index_is_config_error(self, dataset, tmp_path):
        rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                   "--out", str(tmp_path / "r.jsonl"), "--t-norm", "0.1",
                   "--index-mode", "indexed", "--restricted"])
        assert rc == EXIT_CONFIG

    def test_memory_cap_env_is_resource_error(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("MOTIONLINK_MEMORY_CAP", "1024")
        rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                   "--out", str(tmp_path / "r.jsonl"), "--t-norm", "0.1",
                   "--index-mode", "indexed"])
        assert rc == EXIT_RESOURCE

    def test_config_file_with_flag_override(self, dataset, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"t_norm": 1.0, "top_k": 2}))
        report = tmp_path / "report.json"
        rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                   "--out", str(tmp_path / "r.jsonl"), "--truth", dataset["truth"],
                   "--report", str(report), "--config", str(cfg), "--t-norm", "0.2"])
        assert rc == EXIT_OK
        echo = json.loads(report.read_text())["config"]
        assert echo["t_norm"] == 0.2  # flag beat the file
        assert json.loads(report.read_text())["top_k"] == 2  # file value survived

    def test_unknown_config_key_is_config_error(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"tnorm": 0.5}))
        rc = main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                   "--out", str(tmp_path / "r.jsonl"), "--config", str(cfg)])
        assert rc == EXIT_CONFIG
        assert "tnorm" in capsys.readouterr().err


class TestBench:
    def test_one_size_two_rows(self, tmp_path, capsys):
        out = tmp_path / "scaling.csv"
        assert main(["bench", "--sizes", "100x100", "--out", str(out)]) == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert [r["method"] for r in rows] == ["naive", "indexed"]
        assert all(r["status"] == "ok" for r in rows)
        assert rows[0]["pairs_retained"] == rows[1]["pairs_retained"]

    def test_naive_cutoff_marks_row_skipped(self, tmp_path):
        out = tmp_path / "scaling.csv"
        rc = main(["bench", "--sizes", "200x200", "--out", str(out),
                   "--k", "5", "--t-abs", "1", "--naive-cutoff", "10000"])
        assert rc == EXIT_OK
        rows = {r["method"]: r for r in csv.DictReader(out.open())}
        assert rows["naive"]["status"] == "skipped"
        assert rows["naive"]["wall_time_ms"] == ""
        assert rows["indexed"]["status"] == "ok"

    def test_retained_counts_reproducible(self, tmp_path):
        counts = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["bench", "--sizes", "80x80,160x160", "--out", str(out)]) == EXIT_OK
            counts.append([r["pairs_retained"] for r in csv.DictReader(out.open())])
        assert counts[0] == counts[1]

    def test_malformed_sizes_is_config_error(self, tmp_path, capsys):
        rc = main(["bench", "--sizes", "100by100", "--out", str(tmp_path / "s.csv")])
        assert rc == EXIT_CONFIG


class TestEvaluate:
    def test_round_trip_through_files(self, dataset, tmp_path, capsys):
        rank = tmp_path / "rank.jsonl"
        assert main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                     "--out", str(rank)]) == EXIT_OK
        capsys.readouterr()
        report = tmp_path / "report.json"
        rc = main(["evaluate", "--rankings", str(rank), "--truth", dataset["truth"],
                   "--out", str(report)])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "top-1 rate 1.0000" in out
        payload = json.loads(report.read_text())
        assert payload["fraction_correct"] == 1.0

    def test_truth_missing_an_avatar_is_data_error(self, dataset, tmp_path):
        rank = tmp_path / "rank.jsonl"
        assert main(["correlate", "--visual", dataset["visual"], "--motion", dataset["motion"],
                     "--out", str(rank)]) == EXIT_OK
        truth = json.loads(open(dataset["truth"]).read())
        truth["avatars"].popitem()
        broken = tmp_path / "truth.json"
        broken.write_text(json.dumps(truth))
        rc = main(["evaluate", "--rankings", str(rank), "--truth", str(broken)])
        assert rc == EXIT_DATA


class TestSweep:
    def test_grid_csv(self, tmp_path):
        spec = write_spec(tmp_path / "spec.json", num_identities=4, n_windows=16)
        out = tmp_path / "sweep.csv"
        rc = main(["sweep", "--spec", spec, "--w-values", "1.0",
                   "--t-values", "0.3,1.0", "--out", str(out)])
        assert rc == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2
        # a full-width threshold never filters, so nobody is left unmatched
        full = next(r for r in rows if r["t_norm"] == "1.0")
        assert full["fraction_none"] == "0.0"

    def test_bad_values_list_is_config_error(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "spec.json")
        rc = main(["sweep", "--spec", spec, "--w-values", "", "--t-values", "0.3",
                   "--out", str(tmp_path / "s.csv")])
        assert rc == EXIT_CONFIG


@pytest.fixture(scope="module")
def trace_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("traces")
    spec = write_spec(tmp / "spec.json", num_identities=2, n_windows=16, seed=9)
    out = tmp / "d"
    assert main(["generate", "--spec", spec, "--out-dir", str(out), "--traces"]) == EXIT_OK
    return out


class TestTraceCommands:
    def test_build_series_and_align(self, trace_dir, tmp_path, capsys):
        truth = json.loads((trace_dir / "truth.json").read_text())
        ident = truth["avatars"]["a0000"]
        model = tmp_path / "model.json"
        visual = tmp_path / "v.jsonl"
        rc = main(["build-series", "--trace", str(trace_dir / "keypoints" / "a0000.jsonl"),
                   "--channel", "visual", "--out", str(visual)])
        assert rc == EXIT_OK
        rc = main(["build-series", "--trace", str(trace_dir / "motion" / f"{ident}.csv"),
                   "--channel", "motion", "--out", str(tmp_path / "m.jsonl"),
                   "--save-model", str(model)])
        assert rc == EXIT_OK
        assert model.exists()
        capsys.readouterr()

        align_out = tmp_path / "align.json"
        rc = main(["align", "--motion-csv", str(trace_dir / "motion" / f"{ident}.csv"),
                   "--visual", str(visual), "--avatar", "a0000", "--out", str(align_out),
                   "--model", str(model)])
        assert rc == EXIT_OK
        payload = json.loads(align_out.read_text())
        assert payload["offset"] == 0.0
        assert len(payload["curve"]) == 17  # -4s .. +4s in 0.5s steps

    def test_align_unknown_avatar_is_data_error(self, trace_dir, tmp_path):
        visual = tmp_path / "v.jsonl"
        assert main(["build-series", "--trace", str(trace_dir / "keypoints" / "a0001.jsonl"),
                     "--channel", "visual", "--out", str(visual)]) == EXIT_OK
        rc = main(["align", "--motion-csv", str(trace_dir / "motion" / "u0000.csv"),
                   "--visual", str(visual), "--avatar", "a9999",
                   "--out", str(tmp_path / "x.json")])
        assert rc == EXIT_DATA

    def test_model_channel_mismatch_is_config_error(self, trace_dir, tmp_path, capsys):
        model = tmp_path / "model.json"
        assert main(["build-series", "--trace", str(trace_dir / "motion" / "u0000.csv"),
                     "--channel", "motion", "--out", str(tmp_path / "m.jsonl"),
                     "--save-model", str(model)]) == EXIT_OK
        rc = main(["build-series", "--trace", str(trace_dir / "keypoints" / "a0000.jsonl"),
                   "--channel", "visual", "--out", str(tmp_path / "v.jsonl"),
                   "--model", str(model)])
        assert rc == EXIT_CONFIG
