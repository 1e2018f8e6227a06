"""Weight and checkpoint files.

Layout: a human-readable key-value header (UTF-8 text, one ``key: value``
per line) listing the config, the tokenizer vocabulary, and a tensor
manifest of ``name rows cols byte-offset`` entries, terminated by an
``end`` line, followed by one binary blob of little-endian float64 values
in manifest order.  Round-trips are bit-exact.

Checkpoints reuse the same scheme: optimizer moment tensors are appended
to the manifest under ``opt.m.<name>`` / ``opt.v.<name>`` names plus an
``opt_step`` header field.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ModelConfig, Parameters, TENSOR_FIELDS
from .numerics import DTYPE

MAGIC = "loopformer-weights v1"
_CONFIG_KEYS = ("depth", "hidden", "heads", "ffn", "vocab", "seq_len", "classes")


@dataclass
class OptimizerState:
    """Adam moments per tensor plus the shared step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


@dataclass
class Checkpoint:
    params: Parameters
    vocab_tokens: Optional[list[str]] = None
    optimizer: Optional[OptimizerState] = None


def _manifest_shape(arr: np.ndarray) -> tuple[int, int]:
    if arr.ndim == 1:
        return 1, arr.shape[0]
    if arr.ndim == 2:
        return arr.shape[0], arr.shape[1]
    raise ValueError(f"only 1-D/2-D tensors are serialized, got shape {arr.shape}")


def save_checkpoint(
    path,
    params: Parameters,
    vocab_tokens: Optional[list[str]] = None,
    optimizer: Optional[OptimizerState] = None,
) -> None:
    """Write parameters (and optionally vocab + optimizer state) to ``path``."""
    entries: list[tuple[str, np.ndarray]] = list(params.tensor_items())
    if optimizer is not None:
        for name, _ in params.tensor_items():
            entries.append((f"opt.m.{name}", optimizer.m[name]))
            entries.append((f"opt.v.{name}", optimizer.v[name]))

    header = [MAGIC]
    for key in _CONFIG_KEYS:
        header.append(f"{key}: {getattr(params.config, key)}")
    if vocab_tokens is not None:
        for tok in vocab_tokens:
            if any(ch.isspace() for ch in tok):
                raise ValueError(f"vocab token {tok!r} contains whitespace")
        header.append("vocab_tokens: " + " ".join(vocab_tokens))
    if optimizer is not None:
        header.append(f"opt_step: {optimizer.step}")

    offset = 0
    blobs = []
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, dtype=DTYPE)
        rows, cols = _manifest_shape(arr)
        header.append(f"tensor: {name} {rows} {cols} {offset}")
        raw = arr.astype("<f8", copy=False).tobytes()
        blobs.append(raw)
        offset += len(raw)
    header.append("end")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    """Read a file written by :func:`save_checkpoint`."""
    path = Path(path)
    data = path.read_bytes()

    # header is everything up to and including the "end" line
    marker = b"\nend\n"
    cut = data.find(marker)
    if not data.startswith(MAGIC.encode("utf-8")) or cut < 0:
        raise ValueError(f"{path}: not a loopformer weight file")
    header_text = data[: cut + len(marker)].decode("utf-8")
    blob = data[cut + len(marker) :]

    fields: dict[str, str] = {}
    manifest: list[tuple[str, int, int, int]] = []
    for line in header_text.splitlines()[1:]:
        if line == "end":
            break
        key, _, value = line.partition(": ")
        if key == "tensor":
            name, rows, cols, offset = value.split(" ")
            manifest.append((name, int(rows), int(cols), int(offset)))
        else:
            fields[key] = value

    config = ModelConfig(**{key: int(fields[key]) for key in _CONFIG_KEYS})
    vocab_tokens = fields["vocab_tokens"].split(" ") if "vocab_tokens" in fields else None

    tensors: dict[str, np.ndarray] = {}
    for name, rows, cols, offset in manifest:
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(DTYPE)
        tensors[name] = arr.reshape(cols) if rows == 1 else arr.reshape(rows, cols)

    param_kwargs = {}
    for name in TENSOR_FIELDS:
        if name not in tensors:
            raise ValueError(f"{path}: tensor {name!r} missing from manifest")
        param_kwargs[name] = tensors[name]
    params = Parameters(config=config, **param_kwargs)

    optimizer = None
    if "opt_step" in fields:
        m = {n[len("opt.m.") :]: a for n, a in tensors.items() if n.startswith("opt.m.")}
        v = {n[len("opt.v.") :]: a for n, a in tensors.items() if n.startswith("opt.v.")}
        optimizer = OptimizerState(step=int(fields["opt_step"]), m=m, v=v)
    return Checkpoint(params=params, vocab_tokens=vocab_tokens, optimizer=optimizer)
