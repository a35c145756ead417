"""Checkpoint files.

A checkpoint is a UTF-8 header followed by a binary payload::

    RMDS-CHECKPOINT 1
    [config]
    levels=4
    ...
    [manifest]
    <name>\t<d0,d1,...>\t<offset>\t<nbytes>
    ...
    [payload]
    <concatenated RMDS tensors; offsets are relative to the payload start>

Parameters and batch-norm running statistics are both stored.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .autodiff.serialize import FormatError, tensor_from_bytes, tensor_to_bytes
from .network import ModelConfig, ReMARDS

HEADER = "RMDS-CHECKPOINT 1"
PAYLOAD_MARK = b"[payload]\n"


def checkpoint_bytes(model: ReMARDS, extra: Dict[str, str] | None = None) -> bytes:
    blobs = []
    manifest = []
    offset = 0
    for name, arr in model.state_dict().items():
        blob = tensor_to_bytes(np.asarray(arr))
        shape = ",".join(str(d) for d in np.shape(arr))
        manifest.append(f"{name}\t{shape}\t{offset}\t{len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines = [HEADER, "[config]", model.config.to_text().rstrip("\n")]
    if extra:
        lines += ["[meta]"] + [f"{k}={v}" for k, v in extra.items()]
    lines += ["[manifest]"] + manifest
    head = ("\n".join(lines) + "\n").encode("utf-8")
    return head + PAYLOAD_MARK + b"".join(blobs)


def save_checkpoint(path: Union[str, Path], model: ReMARDS, extra: Dict[str, str] | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, extra))
    tmp.replace(path)


def parse_checkpoint(data: bytes) -> Tuple[ModelConfig, Dict[str, np.ndarray], Dict[str, str]]:
    cut = data.find(PAYLOAD_MARK)
    if not data.startswith(HEADER.encode()) or cut < 0:
        raise FormatError("not an RMDS checkpoint (missing header or payload marker)")
    payload = data[cut + len(PAYLOAD_MARK):]
    sections: Dict[str, list] = {}
    current = None
    for line in data[:cut].decode("utf-8").splitlines()[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None and line:
            sections[current].append(line)
    config = ModelConfig.from_text("\n".join(sections.get("config", [])))
    meta = dict(l.split("=", 1) for l in sections.get("meta", []))
    state = {}
    for line in sections.get("manifest", []):
        try:
            name, shape, offset, nbytes = line.split("\t")
            offset, nbytes = int(offset), int(nbytes)
        except ValueError as exc:
            raise FormatError(f"bad manifest line {line!r}") from exc
        if offset + nbytes > len(payload):
            raise FormatError(f"{name}: payload truncated")
        arr = tensor_from_bytes(payload[offset:offset + nbytes])
        expect = tuple(int(d) for d in shape.split(",")) if shape else ()
        if arr.shape != expect:
            raise FormatError(f"{name}: manifest shape {expect} != stored {arr.shape}")
        state[name] = arr
    return config, state, meta


def load_checkpoint(path: Union[str, Path], precision: str | None = None) -> Tuple[ReMARDS, Dict[str, str]]:
    """Rebuild the model from a checkpoint; returns ``(model, meta)``."""
    config, state, meta = parse_checkpoint(Path(path).read_bytes())
    if precision is not None and precision != config.precision:
        config = ModelConfig(**{**config.__dict__, "precision": precision})
    model = ReMARDS(config)
    model.load_state_dict(state)
    model.eval()
    return model, meta
