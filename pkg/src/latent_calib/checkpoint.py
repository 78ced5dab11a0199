"""Binary parameter checkpoint files.

Layout (all integers little-endian, see docs/checkpoint_format.md):

====================  =======================================
magic                 4 bytes, ``b"LCNN"``
format version        u32 (currently 1)
layer count           u32
per layer:
  in_dim              u32
  out_dim             u32
  activation code     u32 (0 = identity, 1 = relu)
  weights             in_dim * out_dim float64 LE, row-major
  biases              out_dim float64 LE
====================  =======================================

Only parameters are stored; optimizer state is not part of the format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .netcore import IDENTITY, RELU, DenseLayer, Network
from .validation import check_finite

MAGIC = b"LCNN"
FORMAT_VERSION = 1

_ACT_CODES = {IDENTITY: 0, RELU: 1}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}


def save_network(net: Network, path) -> None:
    """Write a network's parameters to ``path`` in LCNN v1 format."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(net.layers)))
        for layer in net.layers:
            fh.write(struct.pack("<III", layer.in_dim, layer.out_dim,
                                 _ACT_CODES[layer.activation]))
            fh.write(np.ascontiguousarray(
                layer.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(
                layer.biases.ravel(), dtype="<f8").tobytes())


def load_network(path, seed: int = 0) -> Network:
    """Read an LCNN v1 checkpoint back into a Network (fresh optimizer)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not an LCNN checkpoint")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported format version {version}"
        )
    offset = 12
    layers = []
    for i in range(n_layers):
        if offset + 12 > len(data):
            raise CheckpointFormatError(f"{path}: truncated header, layer {i}")
        in_dim, out_dim, act_code = struct.unpack_from("<III", data, offset)
        offset += 12
        if act_code not in _CODE_ACTS:
            raise CheckpointFormatError(
                f"{path}: unknown activation code {act_code}"
            )
        n_w, n_b = in_dim * out_dim, out_dim
        nbytes = 8 * (n_w + n_b)
        if offset + nbytes > len(data):
            raise CheckpointFormatError(f"{path}: truncated arrays, layer {i}")
        w = np.frombuffer(data, dtype="<f8", count=n_w, offset=offset)
        offset += 8 * n_w
        b = np.frombuffer(data, dtype="<f8", count=n_b, offset=offset)
        offset += 8 * n_b
        w = w.reshape(in_dim, out_dim).astype(np.float64)
        b = b.reshape(1, out_dim).astype(np.float64)
        check_finite(w, f"{path} layer {i} weights")
        check_finite(b, f"{path} layer {i} biases")
        layers.append(DenseLayer(w, b, _CODE_ACTS[act_code]))
    if offset != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - offset} trailing bytes")
    try:
        return Network(layers=layers, rng_seed=seed)
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from exc
