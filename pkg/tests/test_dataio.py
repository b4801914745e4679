import json

import numpy as np
import pytest

from sigforecast import dataio
from sigforecast.dataio import DataError


def write_dataset(tmp_path, lines, meta="freq=H\nprediction_length=3\n"):
    path = tmp_path / "data.jsonl"
    path.write_text("\n".join(lines) + "\n")
    (tmp_path / "data.meta").write_text(meta)
    return path


class TestLoadJsonlines:
    def test_basic_parse(self, tmp_path):
        path = write_dataset(
            tmp_path,
            ['{"start":"2006-01-01 00:00:00","target":[1.0,2.0,3.0]}'],
        )
        ds = dataio.load_jsonlines(path)
        assert len(ds) == 1
        assert ds.freq == "H" and ds.prediction_length == 3
        assert np.array_equal(ds.records[0].target, [1.0, 2.0, 3.0])
        assert ds.records[0].start == "2006-01-01 00:00:00"

    def test_rejects_non_numeric_target(self, tmp_path):
        path = write_dataset(tmp_path, ['{"target":[1.0,"x"]}'])
        with pytest.raises(DataError, match="line 1"):
            dataio.load_jsonlines(path)

    def test_rejects_nonfinite(self, tmp_path):
        path = write_dataset(tmp_path, ['{"target":[1.0,2.0]}', '{"target":[1e999]}'])
        with pytest.raises(DataError, match="line 2"):
            dataio.load_jsonlines(path)

    def test_rejects_bad_json_with_line_number(self, tmp_path):
        path = write_dataset(tmp_path, ['{"target":[1.0]}', "{nope"])
        with pytest.raises(DataError, match="line 2"):
            dataio.load_jsonlines(path)

    def test_empty_file(self, tmp_path):
        path = write_dataset(tmp_path, [""])
        with pytest.raises(DataError, match="empty"):
            dataio.load_jsonlines(path)

    def test_missing_metadata(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"target":[1.0]}\n')
        with pytest.raises(DataError, match="sidecar"):
            dataio.load_jsonlines(path)

    def test_round_trip_bit_exact(self, tmp_path, rng):
        ds = dataio.Dataset(
            records=[
                dataio.DatasetRecord("a", "2020-01-01 00:00:00", rng.standard_normal(17)),
                dataio.DatasetRecord("b", "2020-01-02 00:00:00", rng.standard_normal(5) * 1e-7),
            ],
            freq="D",
            prediction_length=2,
        )
        path = tmp_path / "rt.jsonl"
        dataio.save_jsonlines(ds, path)
        back = dataio.load_jsonlines(path)
        assert back.freq == "D" and back.prediction_length == 2
        for a, b in zip(ds.records, back.records):
            assert a.item_id == b.item_id
            assert np.array_equal(a.target, b.target)

    def test_loader_preserves_order(self, tmp_path):
        lines = [json.dumps({"item_id": f"s{i}", "target": [float(i)] * 2}) for i in range(5)]
        ds = dataio.load_jsonlines(write_dataset(tmp_path, lines))
        assert [r.item_id for r in ds.records] == [f"s{i}" for i in range(5)]


class TestSynthMultisin:
    def test_default_lengths(self):
        ds = dataio.synth_multisin()
        assert len(ds.records[0].target) == 800  # 700 train + 100 horizon
        assert ds.prediction_length == 100

    def test_deterministic(self):
        a = dataio.synth_multisin(seed=5).records[0].target
        b = dataio.synth_multisin(seed=5).records[0].target
        assert np.array_equal(a, b)
        c = dataio.synth_multisin(seed=6).records[0].target
        assert not np.array_equal(a, c)

    def test_near_zero_mean(self):
        for seed in range(5):
            y = dataio.synth_multisin(seed=seed).records[0].target
            assert abs(y.mean()) < 2 / np.sqrt(y.shape[0])

    def test_component_structure(self):
        # four sinusoids with the documented amplitudes bound the range
        y = dataio.synth_multisin(seed=0).records[0].target
        assert np.abs(y).max() <= sum(dataio.SYNTH_AMPS) + 1e-12

    def test_custom_components(self):
        ds = dataio.synth_multisin(n_train=50, horizon=10, periods=(10.0,), amps=(2.0,))
        assert len(ds.records[0].target) == 60


def test_to_csv(tmp_path):
    ds = dataio.Dataset(
        records=[dataio.DatasetRecord("x", "t0", np.array([1.5, -2.0]))],
        freq="H",
        prediction_length=1,
    )
    out = tmp_path / "out.csv"
    dataio.to_csv(ds, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "item_id,t,value"
    assert lines[1] == "x,0,1.5"
    assert lines[2] == "x,1,-2.0"
