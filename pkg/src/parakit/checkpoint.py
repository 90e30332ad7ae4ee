"""Checkpoint persistence.

A checkpoint is a text header followed by raw tensor bytes:

    PARAKITCKPT <version>
    config_bytes=<n>
    vocab_bytes=<n>
    history=<path or empty>
    lora_rank=<r>
    lora_alpha=<float repr>
    tensor_count=<m>
    <name> <shape dims comma-separated> <byte offset> <byte length>   (x m)
    end_header
    <config text bytes><vocab text bytes><tensor blob>

Every tensor is float32, little-endian, row-major; offsets index into the
blob.  Tensor names are sorted, the config and vocabulary snapshots are kept
verbatim, and floats round-trip through repr, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocab
from .errors import CheckpointError
from .lora import AdapterSet, LoRAAdapter
from .model import ModelConfig, parameter_names

MAGIC = "PARAKITCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config_text: str
    vocab_text: str
    params: dict[str, np.ndarray]
    adapters: AdapterSet
    history: str = ""

    def vocab(self) -> Vocab:
        lines = self.vocab_text.splitlines()
        mode = lines[0].split("mode=", 1)[1]
        return Vocab.from_surfaces(lines[1:], mode=mode)


def _f32(t: np.ndarray) -> np.ndarray:
    if t.dtype != np.float32:
        t = t.astype(np.float32)
    return np.ascontiguousarray(t)


def save_checkpoint(
    path: str | Path,
    config_text: str,
    vocab_text: str,
    params: dict[str, np.ndarray],
    adapters: AdapterSet,
    history: str = "",
) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, t in params.items():
        tensors[f"param/{name}"] = _f32(t)
    for name, t in adapters.tensor_items():
        tensors[f"adapter/{name}"] = _f32(t)

    config_bytes = config_text.encode("utf-8")
    vocab_bytes = vocab_text.encode("utf-8")
    directory = []
    blob_parts = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name]
        raw = t.astype("<f4", copy=False).tobytes(order="C")
        shape = ",".join(str(s) for s in t.shape) if t.ndim else "1"
        directory.append(f"{name} {shape} {offset} {len(raw)}")
        blob_parts.append(raw)
        offset += len(raw)

    header_lines = [
        f"{MAGIC} {VERSION}",
        f"config_bytes={len(config_bytes)}",
        f"vocab_bytes={len(vocab_bytes)}",
        f"history={history}",
        f"lora_rank={int(adapters.rank)}",
        f"lora_alpha={float(adapters.alpha)!r}",
        f"tensor_count={len(directory)}",
        *directory,
        "end_header",
    ]
    header = ("\n".join(header_lines) + "\n").encode("utf-8")
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(config_bytes)
        f.write(vocab_bytes)
        for part in blob_parts:
            f.write(part)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: not a checkpoint file")
    first = data[:nl].decode("utf-8", "replace").split()
    if len(first) != 2 or first[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if int(first[1]) != VERSION:
        raise CheckpointError(
            f"{path}: format version {first[1]} unsupported (expected {VERSION})")

    end = data.find(b"\nend_header\n")
    if end < 0:
        raise CheckpointError(f"{path}: truncated header")
    header_lines = data[nl + 1 : end].decode("utf-8").split("\n")
    body = data[end + len(b"\nend_header\n") :]

    fields: dict[str, str] = {}
    directory: list[tuple[str, tuple[int, ...], int, int]] = []
    for line in header_lines:
        if "=" in line and " " not in line.split("=", 1)[0]:
            key, val = line.split("=", 1)
            fields[key] = val
        else:
            name, shape_s, off_s, len_s = line.rsplit(" ", 3)
            shape = tuple(int(s) for s in shape_s.split(","))
            directory.append((name, shape, int(off_s), int(len_s)))

    n_cfg = int(fields["config_bytes"])
    n_voc = int(fields["vocab_bytes"])
    config_text = body[:n_cfg].decode("utf-8")
    vocab_text = body[n_cfg : n_cfg + n_voc].decode("utf-8")
    blob = body[n_cfg + n_voc :]

    params: dict[str, np.ndarray] = {}
    adapter_tensors: dict[str, np.ndarray] = {}
    for name, shape, off, nbytes in directory:
        flat = np.frombuffer(blob[off : off + nbytes], dtype="<f4")
        t = flat.reshape(shape).copy()
        if name.startswith("param/"):
            params[name[len("param/") :]] = t
        elif name.startswith("adapter/"):
            adapter_tensors[name[len("adapter/") :]] = t
        else:
            raise CheckpointError(f"{path}: unknown tensor namespace in {name!r}")

    rank = int(fields["lora_rank"])
    alpha = float(fields["lora_alpha"])
    adapters = _adapters_from_tensors(adapter_tensors, rank, alpha)
    return Checkpoint(
        version=VERSION, config_text=config_text, vocab_text=vocab_text,
        params=params, adapters=adapters, history=fields.get("history", ""),
    )


def _adapters_from_tensors(tensors: dict[str, np.ndarray], rank: int, alpha: float) -> AdapterSet:
    adapters: dict[tuple[int, str], LoRAAdapter] = {}
    keys = {name.rsplit(".", 1)[0] for name in tensors}
    for key in keys:
        layer_s, target = key.split(".")
        a = tensors[f"{key}.A"]
        b = tensors[f"{key}.B"]
        adapters[(int(layer_s), target)] = LoRAAdapter(
            a=a, b=b, rank=rank, scaling=alpha / rank)
    return AdapterSet(adapters, rank=rank, alpha=alpha)


def verify_parameters(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    """Raise if the tensor set does not match the model configuration."""
    expected = set(parameter_names(config))
    got = set(params)
    if expected != got:
        missing = sorted(expected - got)[:3]
        extra = sorted(got - expected)[:3]
        raise CheckpointError(f"parameter mismatch: missing {missing}, extra {extra}")
    if params["embed"].shape != (config.vocab_size, config.dim):
        raise CheckpointError("embedding shape does not match the configuration")
