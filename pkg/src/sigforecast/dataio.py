"""Dataset ingestion: JSON-lines records with a key/value metadata sidecar,
CSV export, and the synthetic multi-sinusoid generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: default components of the synthetic wave: two long and two short periods.
#: 21 (not 20) keeps the short cycle incommensurate with the dominant 200.
SYNTH_PERIODS = (200.0, 100.0, 21.0, 10.0)
SYNTH_AMPS = (1.0, 0.5, 0.5, 0.25)


class DataError(RuntimeError):
    """Malformed dataset input."""


@dataclass(frozen=True)
class DatasetRecord:
    item_id: str
    start: str
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        self.target.setflags(write=False)


@dataclass
class Dataset:
    records: list
    freq: str = "H"
    prediction_length: int = 1

    def __len__(self) -> int:
        return len(self.records)


def _meta_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def _parse_target(raw, lineno: int) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise DataError(f"line {lineno}: 'target' must be a non-empty list")
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DataError(f"line {lineno}: non-numeric target entry {v!r}")
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"line {lineno}: non-finite target entry")
    return arr


def read_metadata(path) -> dict:
    """Parse the key=value sidecar (keys: freq, prediction_length)."""
    meta = {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"metadata sidecar {p} not found")
    for raw in p.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"malformed metadata line: {raw!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def load_jsonlines(path, metadata: dict | None = None) -> Dataset:
    """One record per line; metadata comes from the .meta sidecar by default.

    The final ``prediction_length`` values of each test series are the
    evaluation targets (split applied by the consumer, never here).
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset file {p} not found")
    if metadata is None:
        metadata = read_metadata(_meta_path(p))
    try:
        freq = str(metadata["freq"])
        prediction_length = int(metadata["prediction_length"])
    except (KeyError, ValueError) as err:
        raise DataError(f"metadata must supply freq and prediction_length: {err}") from err

    records = []
    with open(p, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"line {lineno}: invalid JSON ({err.msg})") from err
            if not isinstance(obj, dict) or "target" not in obj:
                raise DataError(f"line {lineno}: expected an object with a 'target' field")
            records.append(
                DatasetRecord(
                    item_id=str(obj.get("item_id", f"series-{lineno:04d}")),
                    start=str(obj.get("start", "1970-01-01 00:00:00")),
                    target=_parse_target(obj["target"], lineno),
                )
            )
    if not records:
        raise DataError(f"dataset file {p} is empty")
    return Dataset(records=records, freq=freq, prediction_length=prediction_length)


def save_jsonlines(dataset: Dataset, path) -> None:
    """Write records plus the metadata sidecar; floats round-trip exactly."""
    p = Path(path)
    with open(p, "w") as fh:
        for rec in dataset.records:
            fh.write(
                json.dumps(
                    {
                        "item_id": rec.item_id,
                        "start": rec.start,
                        "target": [float(v) for v in rec.target],
                    }
                )
                + "\n"
            )
    _meta_path(p).write_text(
        f"freq={dataset.freq}\nprediction_length={dataset.prediction_length}\n"
    )


def to_csv(dataset: Dataset, path) -> None:
    """Flat CSV export: item_id, t, value."""
    with open(path, "w") as fh:
        fh.write("item_id,t,value\n")
        for rec in dataset.records:
            for t, v in enumerate(rec.target):
                fh.write(f"{rec.item_id},{t},{float(v)!r}\n")


def synth_multisin(
    n_train: int = 700,
    horizon: int = 100,
    seed: int = 0,
    periods=SYNTH_PERIODS,
    amps=SYNTH_AMPS,
    n_series: int = 1,
    start: str = "2006-01-01 00:00:00",
) -> Dataset:
    """Multi-sinusoid benchmark series: sum of four components with seeded
    phases, n_train + horizon points long (defaults 700 + 100)."""
    if n_train < 1 or horizon < 1:
        raise ValueError("n_train and horizon must be >= 1")
    periods = np.asarray(periods, dtype=np.float64)
    amps = np.asarray(amps, dtype=np.float64)
    if periods.shape != amps.shape:
        raise ValueError("periods and amps must align")
    rng = np.random.default_rng(int(seed))
    t = np.arange(n_train + horizon, dtype=np.float64)
    records = []
    for i in range(n_series):
        phases = rng.uniform(0.0, 2.0 * np.pi, periods.shape[0])
        y = np.zeros_like(t)
        for a, p, ph in zip(amps, periods, phases):
            y += a * np.sin(2.0 * np.pi * t / p + ph)
        records.append(DatasetRecord(item_id=f"synth-{i:03d}", start=start, target=y))
    return Dataset(records=records, freq="H", prediction_length=horizon)
