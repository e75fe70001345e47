import json

import pytest

from fsglab.cli import main
from fsglab.metrics import METRICS_HEADER, MetricsWriter, dump_curve, read_metrics
from fsglab.trainer import MetricsRecord

TINY_TRAIN = "\n".join([
    "method = fsg",
    "epochs = 2",
    "batch_size = 8",
    "l = 2",
    "seed = 3",
    "fast_hidden = 6",
    "token_dim = 3",
    "state_dim = 2",
    "expand = 1",
    "dataset.kind = blobs",
    "dataset.n_per_class = 8",
    "dataset.noise = 0.3",
    "model.layers = dense:2:4, bias:4, relu, dense:4:2:bin, bias:2",
    "lr_decay.factor = 1.0",
])


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text + "\n")
    return path


class TestTrainCommand:
    def test_train_writes_metrics_and_manifest(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN)
        out = tmp_path / "out"
        assert main(["train", str(cfg), "--out", str(out)]) == 0
        records = read_metrics(out / "metrics.csv")
        assert len(records) == 2
        assert all(r.split == "train" for r in records)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert len(manifest["config_hash"]) == 64
        assert (out / "config.txt").exists()

    def test_train_twice_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["train", str(cfg), "--out", str(out1)]) == 0
        assert main(["train", str(cfg), "--out", str(out2)]) == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_test_split_rows(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN + "\ndataset.test_per_class = 4")
        out = tmp_path / "out"
        assert main(["train", str(cfg), "--out", str(out)]) == 0
        splits = [r.split for r in read_metrics(out / "metrics.csv")]
        assert splits == ["train", "test", "train", "test"]

    def test_config_error_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path, "l = 0")
        assert main(["train", str(cfg)]) == 2


class TestAblateCommand:
    def test_beta_sweep_emits_per_value_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN)
        out = tmp_path / "sweep"
        assert main(["ablate", str(cfg), "--sweep", "beta=0.1,0.3",
                     "--out", str(out)]) == 0
        for tag, beta in (("beta_0.1", 0.1), ("beta_0.3", 0.3)):
            sub = out / tag
            assert (sub / "metrics.csv").exists()
            text = (sub / "config.txt").read_text()
            assert f"beta = {beta!r}" in text

    def test_l_range_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN)
        out = tmp_path / "sweep"
        assert main(["ablate", str(cfg), "--sweep", "l=2..3", "--out", str(out)]) == 0
        assert (out / "l_2" / "metrics.csv").exists()
        assert (out / "l_3" / "metrics.csv").exists()

    def test_slow_net_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN)
        out = tmp_path / "sweep"
        assert main(["ablate", str(cfg), "--sweep", "slow=lstm,ssm",
                     "--out", str(out)]) == 0
        assert (out / "slow_lstm" / "metrics.csv").exists()
        assert (out / "slow_selective-ssm" / "metrics.csv").exists()

    def test_unknown_sweep_key(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_TRAIN)
        assert main(["ablate", str(cfg), "--sweep", "gamma=1,2",
                     "--out", str(tmp_path / "x")]) == 2


class TestBenchCommand:
    def test_bench_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, "\n".join([
            "bench.t = 400",
            "bench.seeds = 2",
            "bench.repeats = 1",
            "bench.dim = 3",
            "beta = 0.5",
        ]))
        out = tmp_path / "bench"
        assert main(["bench-convergence", str(cfg), "--out", str(out)]) == 0
        gap_lines = (out / "bench_gap.csv").read_text().splitlines()
        assert gap_lines[0] == "t,mean_gap,stderr"
        assert len(gap_lines) > 5
        summary = json.loads((out / "bench_summary.json").read_text())
        assert len(summary["slopes"]) == 2
        assert summary["max_pk_residual"] < 1e-10


class TestDumpCurve:
    def test_projection(self, tmp_path):
        metrics = tmp_path / "metrics.csv"
        writer = MetricsWriter(metrics)
        writer.write(MetricsRecord(1, 10, "train", 0.5, 0.8, 1e-3, 0))
        writer.write(MetricsRecord(1, 10, "test", 0.6, 0.7, 1e-3, 0))
        out = tmp_path / "curve.csv"
        assert main(["dump-curve", str(metrics), "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch,iter,split,loss"
        assert lines[1] == "1,10,train,0.5"
        assert lines[2] == "1,10,test,0.6"

    def test_dump_curve_function(self, tmp_path):
        metrics = tmp_path / "metrics.csv"
        writer = MetricsWriter(metrics)
        writer.write(MetricsRecord(2, 5, "train", 0.25, 0.9, 1e-2, 3))
        out = tmp_path / "c.csv"
        assert dump_curve(metrics, out) == 1


class TestCliBasics:
    def test_unknown_subcommand_nonzero(self, capsys):
        with pytest.raises(SystemExit):
            main(["frobnicate"])

    def test_no_subcommand_usage(self):
        assert main([]) == 2

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FSGLAB_OUTPUT_ROOT", str(tmp_path))
        cfg = write_cfg(tmp_path, TINY_TRAIN + "\noutput_dir = nested/run")
        assert main(["train", str(cfg)]) == 0
        assert (tmp_path / "nested" / "run" / "metrics.csv").exists()


class TestMetricsIo:
    def test_header_fixed(self, tmp_path):
        path = tmp_path / "m.csv"
        MetricsWriter(path)
        assert path.read_text().splitlines()[0] == METRICS_HEADER

    def test_round_trip(self, tmp_path):
        path = tmp_path / "m.csv"
        writer = MetricsWriter(path)
        rec = MetricsRecord(3, 42, "train", 0.125, 0.875, 0.001, 0)
        writer.write(rec)
        back = read_metrics(path)[0]
        assert back == rec

    def test_record_validation(self):
        with pytest.raises(ValueError):
            MetricsRecord(1, 1, "train", -0.1, 0.5, 1e-3, 0).validate()
        with pytest.raises(ValueError):
            MetricsRecord(1, 1, "train", 0.1, 1.5, 1e-3, 0).validate()


def test_check_subcommand_clean_build_exit_zero():
    assert main(["check"]) == 0
