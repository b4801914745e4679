"""Checkpoint container: named numeric arrays + JSON metadata, bit-stable.

Layout: 8-byte magic, little-endian uint64 header length, a sorted-keys JSON
header describing every array (explicit '<f8'/'<i8' dtypes, shapes, offsets),
then the raw array payload.  No timestamps or compression, so identical
models serialize to identical bytes; reload reproduces predictions exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .forecast import ForecastConfig, Model
from .randfourier import RandomBasis
from .vargp import PARAM_BLOCKS, VariationalState

MAGIC = b"SIGFCAST"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint."""


_CONFIG_FIELDS = (
    "horizon",
    "lags",
    "rff_dim",
    "levels",
    "window",
    "lr",
    "epochs",
    "min_steps",
    "penalty_weight",
    "mode",
    "spectral",
    "quantile_levels",
    "calibration_grid",
    "season",
    "seed",
    "step_batch",
    "lambda_init",
    "q_init",
)


def _encode_arrays(arrays: dict) -> tuple[bytes, dict]:
    index = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        raw = np.ascontiguousarray(arr.astype(dtype)).tobytes()
        index[name] = {"dtype": dtype, "shape": list(arr.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), index


def save_checkpoint(model: Model, path) -> None:
    state = model.state
    basis = state.basis
    arrays = {f"param/{k}": v for k, v in state.params.items()}
    arrays.update(
        {
            "basis/eps_freq": basis.eps_freq,
            "basis/eps_phase": basis.eps_phase,
            "basis/u_aug": basis.u_aug,
            "basis/u_prior": basis.u_prior,
        }
    )
    item_ids = sorted(model.scalers)
    if item_ids:
        arrays["scaler/means"] = np.array([model.scalers[i][0] for i in item_ids])
        arrays["scaler/stds"] = np.array([model.scalers[i][1] for i in item_ids])
        arrays["scaler/betas"] = np.array([model.betas.get(i, np.nan) for i in item_ids])
    payload, index = _encode_arrays(arrays)

    cfg = {}
    for f in _CONFIG_FIELDS:
        v = getattr(model.config, f)
        cfg[f] = list(v) if isinstance(v, tuple) else v
    header = {
        "format_version": FORMAT_VERSION,
        "seed": basis.seed,
        "dims": {
            "levels": basis.levels,
            "in_dim": basis.in_dim,
            "rff_dim": basis.rff_dim,
            "heads": state.heads,
            "window": state.window,
        },
        "spectral": state.spectral,
        "penalty_weight": state.penalty_weight,
        "freq": model.freq,
        "item_ids": item_ids,
        "config": cfg,
        "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint64(len(blob)).astype("<u8").tobytes())
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> Model:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint {p} not found")
    raw = p.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{p} is not a sigforecast checkpoint")
    hlen = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"incompatible checkpoint format_version "
            f"{header.get('format_version')!r}; this build reads {FORMAT_VERSION}"
        )
    body = raw[16 + hlen :]

    def read(name):
        meta = header["arrays"][name]
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(body, dtype=meta["dtype"], count=count, offset=start)
        return arr.reshape(shape).astype(np.float64).copy()

    dims = header["dims"]
    basis = RandomBasis(
        seed=int(header["seed"]),
        levels=int(dims["levels"]),
        in_dim=int(dims["in_dim"]),
        rff_dim=int(dims["rff_dim"]),
        eps_freq=read("basis/eps_freq"),
        eps_phase=read("basis/eps_phase"),
        u_aug=read("basis/u_aug"),
        u_prior=read("basis/u_prior"),
    )
    params = {k: read(f"param/{k}") for k in PARAM_BLOCKS}
    params["log_noise"] = np.asarray(params["log_noise"]).reshape(())
    state = VariationalState(
        params=params,
        basis=basis,
        heads=int(dims["heads"]),
        window=int(dims["window"]),
        spectral=str(header["spectral"]),
        penalty_weight=float(header["penalty_weight"]),
    )
    cfg_raw = dict(header["config"])
    cfg_raw["quantile_levels"] = tuple(cfg_raw["quantile_levels"])
    cfg_raw["calibration_grid"] = tuple(cfg_raw["calibration_grid"])
    config = ForecastConfig(**cfg_raw)

    scalers, betas = {}, {}
    for i, item in enumerate(header["item_ids"]):
        means = read("scaler/means")
        stds = read("scaler/stds")
        bts = read("scaler/betas")
        scalers[item] = (float(means[i]), float(stds[i]))
        if np.isfinite(bts[i]):
            betas[item] = float(bts[i])
    return Model(
        state=state,
        config=config,
        scalers=scalers,
        betas=betas,
        freq=str(header["freq"]),
    )
