import hashlib
import json

import numpy as np
import pytest

from sigforecast import checkpoint, cli, dataio, forecast


TINY_CONFIG = """
D = 8
M = 2
lags = 3
W = 4
lr = 0.01
epochs = 2
min_steps = 60
mode = ppgpr_penalty
seed = 3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """synth -> train once; reused by the read-only command tests."""
    root = tmp_path_factory.mktemp("cli")
    rc = cli.main(["synth", "--out", str(root / "toy"), "--seed", "1",
                   "--n-train", "120", "--horizon", "8", "--csv"])
    assert rc == 0
    (root / "train.cfg").write_text(TINY_CONFIG)
    rc = cli.main([
        "train", "--data", str(root / "toy_train.jsonl"), "--config", str(root / "train.cfg"),
        "--out", str(root / "model.ckpt"), "--no-plots",
    ])
    assert rc == 0
    return root


class TestSynth:
    def test_outputs_exist(self, workdir):
        train = dataio.load_jsonlines(workdir / "toy_train.jsonl")
        test = dataio.load_jsonlines(workdir / "toy_test.jsonl")
        assert len(train.records[0].target) == 120
        assert len(test.records[0].target) == 128
        assert test.prediction_length == 8
        # the train file is the test file minus the evaluation targets
        assert np.array_equal(train.records[0].target, test.records[0].target[:-8])

    def test_deterministic(self, workdir, tmp_path):
        cli.main(["synth", "--out", str(tmp_path / "again"), "--seed", "1",
                  "--n-train", "120", "--horizon", "8"])
        a = (workdir / "toy_train.jsonl").read_bytes()
        b = (tmp_path / "again_train.jsonl").read_bytes()
        assert a == b


class TestTrain:
    def test_checkpoint_and_trace(self, workdir):
        assert (workdir / "model.ckpt").exists()
        trace = (workdir / "model_trace.csv").read_text().splitlines()
        assert trace[0] == "step,loss"
        assert len(trace) == 61  # header + min_steps rows

    def test_checkpoint_hash_reproducible(self, workdir, tmp_path):
        rc = cli.main([
            "train", "--data", str(workdir / "toy_train.jsonl"),
            "--config", str(workdir / "train.cfg"),
            "--out", str(tmp_path / "model2.ckpt"), "--no-plots",
        ])
        assert rc == 0
        h1 = hashlib.sha256((workdir / "model.ckpt").read_bytes()).hexdigest()
        h2 = hashlib.sha256((tmp_path / "model2.ckpt").read_bytes()).hexdigest()
        assert h1 == h2

    def test_missing_data_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train", "--out", "x.ckpt"])
        assert exc.value.code == 2

    def test_bad_path_is_data_error(self, tmp_path):
        rc = cli.main(["train", "--data", str(tmp_path / "nope.jsonl"),
                       "--out", str(tmp_path / "m.ckpt")])
        assert rc == 3

    def test_unknown_config_key_rejected(self, workdir, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("bogus = 1\n")
        rc = cli.main(["train", "--data", str(workdir / "toy_train.jsonl"),
                       "--config", str(bad), "--out", str(tmp_path / "m.ckpt")])
        assert rc == 3


class TestCheckpoint:
    def test_reload_reproduces_predictions(self, workdir):
        model = checkpoint.load_checkpoint(workdir / "model.ckpt")
        ds = dataio.load_jsonlines(workdir / "toy_test.jsonl")
        y = ds.records[0].target[:-8]
        a = forecast.predict(model, y, ds.records[0].item_id)
        model2 = checkpoint.load_checkpoint(workdir / "model.ckpt")
        b = forecast.predict(model2, y, ds.records[0].item_id)
        assert np.array_equal(a.values, b.values)

    def test_save_load_round_trip_bits(self, workdir, tmp_path):
        model = checkpoint.load_checkpoint(workdir / "model.ckpt")
        checkpoint.save_checkpoint(model, tmp_path / "resaved.ckpt")
        assert (workdir / "model.ckpt").read_bytes() == (tmp_path / "resaved.ckpt").read_bytes()

    def test_version_mismatch(self, workdir, tmp_path):
        raw = bytearray((workdir / "model.ckpt").read_bytes())
        hlen = int(np.frombuffer(bytes(raw[8:16]), dtype="<u8")[0])
        header = json.loads(bytes(raw[16 : 16 + hlen]))
        header["format_version"] = 999
        blob = json.dumps(header, sort_keys=True).encode()
        bad = (
            bytes(raw[:8])
            + np.uint64(len(blob)).astype("<u8").tobytes()
            + blob
            + bytes(raw[16 + hlen :])
        )
        (tmp_path / "bad.ckpt").write_bytes(bad)
        with pytest.raises(checkpoint.CheckpointError, match="incompatible"):
            checkpoint.load_checkpoint(tmp_path / "bad.ckpt")
        rc = cli.main(["predict", "--model", str(tmp_path / "bad.ckpt"),
                       "--data", str(workdir / "toy_test.jsonl"),
                       "--out", str(tmp_path / "f.csv")])
        assert rc == 3

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a checkpoint")
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(tmp_path / "junk.ckpt")

    def test_in_memory_vs_reloaded_predictions(self, workdir, tmp_path):
        ds = dataio.load_jsonlines(workdir / "toy_train.jsonl")
        model = forecast.train(
            ds,
            forecast.ForecastConfig(horizon=4, lags=2, rff_dim=6, levels=2, window=3,
                                    lr=0.01, epochs=1, min_steps=20, seed=5),
        )
        direct = forecast.predict(model, ds.records[0].target, ds.records[0].item_id)
        checkpoint.save_checkpoint(model, tmp_path / "m.ckpt")
        loaded = checkpoint.load_checkpoint(tmp_path / "m.ckpt")
        again = forecast.predict(loaded, ds.records[0].target, ds.records[0].item_id)
        assert np.array_equal(direct.values, again.values)


class TestDivergenceHandling:
    def test_train_diverges_to_exit_4_with_checkpoint(self, workdir, tmp_path, capsys):
        bad_cfg = tmp_path / "bad.cfg"
        bad_cfg.write_text("D = 4\nM = 2\nlags = 2\nW = 3\nlr = 1e9\nepochs = 1\nmin_steps = 30\nseed = 0\n")
        ck = tmp_path / "diverged.ckpt"
        with np.errstate(all="ignore"):
            rc = cli.main([
                "train", "--data", str(workdir / "toy_train.jsonl"),
                "--config", str(bad_cfg), "--out", str(ck), "--no-plots",
            ])
        assert rc == 4
        assert "diverged" in capsys.readouterr().err
        # the last finite checkpoint is still usable
        model = checkpoint.load_checkpoint(ck)
        ds = dataio.load_jsonlines(workdir / "toy_train.jsonl")
        qf = forecast.predict(model, ds.records[0].target, ds.records[0].item_id)
        assert np.all(np.isfinite(qf.values))


class TestPredict:
    def test_deterministic_output(self, workdir, tmp_path):
        args = ["predict", "--model", str(workdir / "model.ckpt"),
                "--data", str(workdir / "toy_train.jsonl"), "--no-plots"]
        assert cli.main(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert cli.main(args + ["--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_row_count_and_band(self, workdir, tmp_path):
        out = tmp_path / "fc.csv"
        cli.main(["predict", "--model", str(workdir / "model.ckpt"),
                  "--data", str(workdir / "toy_train.jsonl"),
                  "--out", str(out), "--no-plots"])
        lines = out.read_text().splitlines()
        assert lines[0] == "series_id,step,quantile_level,value"
        assert len(lines) == 1 + 1 * 8 * 9  # series x horizon x quantiles
        band = (tmp_path / "fc_band_synth-000.csv").read_text().splitlines()
        assert band[0] == "t,mean,lower,upper"
        assert len(band) == 9
        for row in band[1:]:
            _, mean, lower, upper = (float(v) for v in row.split(","))
            assert np.isclose(upper - mean, mean - lower, atol=1e-9)

    def test_renders_figures(self, workdir, tmp_path):
        out = tmp_path / "fig.csv"
        cli.main(["predict", "--model", str(workdir / "model.ckpt"),
                  "--data", str(workdir / "toy_train.jsonl"), "--out", str(out)])
        assert (tmp_path / "fig_band_synth-000.png").exists()


class TestEvaluate:
    def test_scores_and_recompute(self, workdir, tmp_path, capsys):
        prefix = tmp_path / "eval"
        rc = cli.main(["evaluate", "--model", str(workdir / "model.ckpt"),
                       "--data", str(workdir / "toy_test.jsonl"),
                       "--out", str(prefix), "--seasonal-naive", "--no-plots"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.startswith("CRPS ")
        reported = float(printed.splitlines()[0].split()[1])

        # independent recomputation from the emitted forecast CSV
        ds = dataio.load_jsonlines(workdir / "toy_test.jsonl")
        actual = {r.item_id: r.target[-8:] for r in ds.records}
        rows = (tmp_path / "eval_forecasts.csv").read_text().splitlines()[1:]
        per_series = {}
        for row in rows:
            sid, step, tau, value = row.split(",")
            per_series.setdefault(sid, {}).setdefault(int(step), {})[float(tau)] = float(value)
        num = 0.0
        denom = 0.0
        taus = sorted({float(r.split(",")[2]) for r in rows})
        for sid, steps in per_series.items():
            for step, quantiles in sorted(steps.items()):
                y = actual[sid][step - 1]
                denom += abs(y)
                for tau in taus:
                    q = quantiles[tau]
                    num += 2 * (tau - (y < q)) * (y - q)
        recomputed = num / (len(taus) * denom)
        assert abs(recomputed - reported) < 1e-12

        table = (tmp_path / "eval_crps.csv").read_text().splitlines()
        assert table[0] == "item_id,crps,beta,coverage3,naive_crps"
        assert len(table) == 2
        assert "CRPS-seasonal-naive" in printed


class TestBench:
    def test_tiny_bench(self, tmp_path):
        out = tmp_path / "bench.csv"
        rc = cli.main(["bench", "--lengths", "256,512", "--D", "16", "--M", "2",
                       "--out", str(out), "--no-plots"])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "L,seconds,peak_bytes,threads"
        assert len(lines) == 3
        for row in lines[1:]:
            length, seconds, peak, threads = row.split(",")
            assert float(seconds) > 0 and int(peak) > 0 and int(threads) >= 1

    def test_thread_flag_does_not_change_values(self, tmp_path, workdir):
        # identical forecasts whether the kernels run on 1 or 2 threads
        from sigforecast import arrayops

        model = checkpoint.load_checkpoint(workdir / "model.ckpt")
        ds = dataio.load_jsonlines(workdir / "toy_test.jsonl")
        y = ds.records[0].target[:-8]
        arrayops.set_threads(1)
        a = forecast.predict(model, y, ds.records[0].item_id)
        arrayops.set_threads(2)
        b = forecast.predict(model, y, ds.records[0].item_id)
        assert np.array_equal(a.values, b.values)
