"""Binary checkpoint format.

Layout: magic line ``BTXE1``, a length-prefixed JSON manifest (encoder
config, extractor mode, vocab fingerprint, tensor name/shape/offset table),
then concatenated little-endian float32 payloads. Loading then saving is
byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import ParamStore
from .encoder import EncoderConfig

MAGIC = b"BTXE1\n"


def save_checkpoint(store: ParamStore, meta: dict, path) -> None:
    """Write all parameters as float32; `meta` must include the model kind."""
    tensors = []
    chunks = []
    offset = 0
    for name, p in store.items():
        arr = np.ascontiguousarray(p.value.data, dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite parameter {name}; refusing to save")
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = dict(meta)
    header["tensors"] = tensors
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(f"{len(blob)}\n".encode("ascii"))
        f.write(blob)
        for c in chunks:
            f.write(c)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as (arrays by name, manifest)."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise ValueError(f"bad checkpoint magic in {path}: expected BTXE1")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ValueError("truncated checkpoint: missing header length line")
    header_len = int(rest[:nl])
    header_start = nl + 1
    blob = rest[header_start : header_start + header_len]
    if len(blob) < header_len:
        raise ValueError(
            f"truncated checkpoint header at byte {len(MAGIC) + header_start + len(blob)}")
    meta = json.loads(blob.decode("utf-8"))
    payload = rest[header_start + header_len:]
    arrays: dict[str, np.ndarray] = {}
    for t in meta["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(payload):
            raise ValueError(
                f"truncated checkpoint payload: tensor {t['name']} needs bytes up to "
                f"offset {end}, payload has {len(payload)}")
        arr = np.frombuffer(payload[t["offset"] : end], dtype="<f4").reshape(t["shape"])
        arrays[t["name"]] = arr.copy()
    return arrays, meta


def checkpoint_meta(config: EncoderConfig, kind: str, vocab_fingerprint: str,
                    **extra) -> dict:
    meta = {
        "config": config.to_dict(),
        "kind": kind,  # "mlm" | "tlm" | "attn" | "concat"
        "vocab_fingerprint": vocab_fingerprint,
    }
    meta.update(extra)
    return meta


def load_into_store(store: ParamStore, path, expect_config: EncoderConfig,
                    vocab_fingerprint: str, override_fingerprint: bool = False,
                    ) -> tuple[list[str], dict]:
    """Initialize matching-name tensors from a checkpoint.

    Parameters absent from the checkpoint (fresh span detector or fusion
    block) keep their current initialization. Encoder config mismatches are
    rejected outright; vocab fingerprint mismatches need an explicit override.
    """
    arrays, meta = load_checkpoint(path)
    ck_cfg = meta.get("config", {})
    if ck_cfg != expect_config.to_dict():
        raise ValueError(
            f"checkpoint encoder config {ck_cfg} does not match model config "
            f"{expect_config.to_dict()}")
    ck_fp = meta.get("vocab_fingerprint", "")
    if ck_fp != vocab_fingerprint and not override_fingerprint:
        raise ValueError(
            "checkpoint vocab fingerprint mismatch; pass override to load anyway")
    loaded = store.load_arrays(arrays)
    return loaded, meta
