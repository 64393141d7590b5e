"""FVBIN container: a minimal self-describing binary format for grids.

Layout: magic ``FVB1`` (4 bytes), format version as little-endian u16,
metadata byte length as little-endian u32, UTF-8 JSON metadata, then the
raw little-endian float32 blocks in the order declared by the metadata's
``blocks`` list. Declared sizes must match the file length exactly and
writes are atomic (temp file + rename), so a valid file is never partial.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .. import beamform, elastodyn, geomodel, neuralvision
from ..errors import DataError

MAGIC = b"FVB1"
VERSION = 1
_RESERVED = {"kind", "dtype", "blocks"}


def write_fvbin(path, kind: str, blocks: dict, meta: dict | None = None) -> None:
    """Write named float32 blocks with JSON metadata; atomic replace."""
    meta = meta or {}
    clash = _RESERVED & set(meta)
    if clash:
        raise DataError(f"metadata keys {sorted(clash)} are reserved")
    arrays = {name: np.ascontiguousarray(arr, dtype="<f4") for name, arr in blocks.items()}
    metadata = {
        "kind": kind,
        "dtype": "f32",
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
        **meta,
    }
    payload = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = MAGIC + struct.pack("<HI", VERSION, len(payload))
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".fvbin.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
            for arr in arrays.values():
                fh.write(arr.tobytes())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def read_fvbin(path):
    """Return (kind, blocks, metadata); validates structure and byte counts."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, meta_len = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if len(raw) < 10 + meta_len:
        raise DataError(f"{path}: truncated metadata at byte {len(raw)}, "
                        f"expected {10 + meta_len}")
    try:
        metadata = json.loads(raw[10:10 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt metadata: {exc}") from exc
    if metadata.get("dtype") != "f32":
        raise DataError(f"{path}: unsupported dtype {metadata.get('dtype')!r}")

    offset = 10 + meta_len
    blocks = {}
    for entry in metadata.get("blocks", []):
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape)) if shape else 4
        if len(raw) < offset + nbytes:
            raise DataError(f"{path}: truncated block {entry['name']!r} at byte {len(raw)}, "
                            f"expected {offset + nbytes}")
        blocks[entry["name"]] = np.frombuffer(
            raw, dtype="<f4", count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes beyond declared blocks")
    return metadata["kind"], blocks, metadata


# ---------------------------------------------------------------------------
# typed serializers


def save_model(path, model: geomodel.VelocityModel) -> None:
    write_fvbin(
        path, "velocity_model",
        {"vs": model.vs, "vp": model.vp, "rho": model.rho,
         "interface_depth": model.interface_depth},
        {"pixel_m": model.pixel_m, "interface_class": model.interface_class,
         "seed": model.seed, "index": model.index, "units": "m/s, kg/m^3, m"},
    )


def load_model(path) -> geomodel.VelocityModel:
    kind, blocks, meta = read_fvbin(path)
    if kind != "velocity_model":
        raise DataError(f"{path}: expected velocity_model, found {kind}")
    return geomodel.VelocityModel(
        vs=blocks["vs"].astype(np.float64),
        vp=blocks["vp"].astype(np.float64),
        rho=blocks["rho"].astype(np.float64),
        interface_depth=blocks["interface_depth"].astype(np.float64),
        interface_class=meta["interface_class"],
        pixel_m=meta["pixel_m"],
        seed=meta["seed"],
        index=meta["index"],
    )


def _source_to_meta(source: elastodyn.SourceFunction) -> dict:
    return {"kind": source.kind, "params": dict(source.params)}


def _source_from_meta(meta: dict) -> elastodyn.SourceFunction:
    return elastodyn.SourceFunction(meta["kind"], dict(meta["params"]))


def save_gather(path, gather: elastodyn.ShotGather, provenance: dict | None = None) -> None:
    write_fvbin(
        path, "shot_gather", {"traces": gather.traces},
        {"rate_hz": gather.rate_hz,
         "receiver_x_m": list(gather.geometry.receiver_x_m),
         "source_x_m": gather.geometry.source_x_m,
         "source": _source_to_meta(gather.source),
         "units": "vertical particle velocity",
         "provenance": provenance or {}},
    )


def load_gather(path) -> elastodyn.ShotGather:
    kind, blocks, meta = read_fvbin(path)
    if kind != "shot_gather":
        raise DataError(f"{path}: expected shot_gather, found {kind}")
    geometry = elastodyn.AcquisitionGeometry(
        tuple(meta["receiver_x_m"]), meta["source_x_m"])
    return elastodyn.ShotGather(blocks["traces"], geometry, meta["rate_hz"],
                                _source_from_meta(meta["source"]))


def _grid_to_meta(grid: beamform.DispersionGrid) -> dict:
    return {k: getattr(grid, k) for k in
            ("f_min_hz", "f_max_hz", "f_step_hz", "v_min_mps", "v_max_mps", "v_step_mps")}


def save_image(path, image: beamform.DispersionImage) -> None:
    write_fvbin(
        path, "dispersion_image",
        {"power": image.power,
         "degenerate_columns": image.degenerate_columns.astype(np.float32)},
        {"grid": _grid_to_meta(image.grid), "normalization": image.normalization,
         "provenance": image.provenance, "units": "beam power"},
    )


def load_image(path) -> beamform.DispersionImage:
    kind, blocks, meta = read_fvbin(path)
    if kind != "dispersion_image":
        raise DataError(f"{path}: expected dispersion_image, found {kind}")
    return beamform.DispersionImage(
        power=blocks["power"].astype(np.float64),
        grid=beamform.DispersionGrid(**meta["grid"]),
        normalization=meta["normalization"],
        provenance=meta.get("provenance", {}),
        degenerate_columns=blocks["degenerate_columns"].astype(bool),
    )


def save_network(path, net: neuralvision.Network) -> None:
    """Persist a float32 network; forward outputs round-trip bit-exactly."""
    blocks = {}
    for li, params in enumerate(net.params):
        for key, value in params.items():
            blocks[f"layer{li:02d}.{key}"] = value
    write_fvbin(path, "network", blocks,
                {"architecture": net.architecture.to_dict(),
                 "training": dict(net.metadata)})


def load_network(path) -> neuralvision.Network:
    kind, blocks, meta = read_fvbin(path)
    if kind != "network":
        raise DataError(f"{path}: expected network, found {kind}")
    arch = neuralvision.Architecture.from_dict(meta["architecture"])
    net = neuralvision.init_network(arch, seed=0)
    for li, params in enumerate(net.params):
        for key in params:
            name = f"layer{li:02d}.{key}"
            if name not in blocks:
                raise DataError(f"{path}: missing parameter block {name}")
            if blocks[name].shape != params[key].shape:
                raise DataError(f"{path}: block {name} has shape {blocks[name].shape}, "
                                f"expected {params[key].shape}")
            params[key] = blocks[name]
    net.metadata = dict(meta.get("training", {}))
    return net


def save_prediction(path, pred: neuralvision.VsImagePrediction) -> None:
    write_fvbin(path, "vs_prediction",
                {"normalized": pred.normalized, "denormalized": pred.denormalized},
                {"vs_norm_max": pred.vs_norm_max, "provenance": pred.provenance,
                 "units": "m/s (denormalized)"})


def load_prediction(path) -> neuralvision.VsImagePrediction:
    kind, blocks, meta = read_fvbin(path)
    if kind != "vs_prediction":
        raise DataError(f"{path}: expected vs_prediction, found {kind}")
    return neuralvision.VsImagePrediction(
        normalized=blocks["normalized"].astype(np.float64),
        vs_norm_max=meta["vs_norm_max"],
        provenance=meta.get("provenance", {}),
    )
