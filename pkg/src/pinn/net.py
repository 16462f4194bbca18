"""Fully-connected MLP built out of graph nodes, plus the weight archive format."""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import ExprNode, Graph, sin, tanh

ACTIVATIONS = {"tanh": tanh, "sin": sin}

MAGIC = b"PINN"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)


class ArchiveError(Exception):
    pass


class CorruptArchiveError(ArchiveError):
    pass


class VersionMismatchError(ArchiveError):
    pass


class LayoutError(ArchiveError):
    pass


class WidthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MLPSpec:
    input_width: int
    hidden_layers: tuple[int, ...] = ()
    activation: str = "tanh"
    output_width: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_width < 1:
            raise ValueError("input_width must be >= 1")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden widths must be >= 1")
        if self.output_width != 1:
            raise ValueError("only scalar-output networks are supported")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")

    @classmethod
    def from_layers(cls, layers: Sequence[int], activation: str = "tanh") -> "MLPSpec":
        """Build from a full width list such as ``[2, 20, 20, 1]``."""
        layers = [int(w) for w in layers]
        if len(layers) < 2:
            raise ValueError("layer list needs at least input and output widths")
        return cls(layers[0], tuple(layers[1:-1]), activation, layers[-1])

    @property
    def layers(self) -> list[int]:
        return [self.input_width, *self.hidden_layers, self.output_width]

    def to_dict(self) -> dict:
        return {"layers": self.layers, "activation": self.activation}


@dataclass(frozen=True)
class Block:
    rows: int
    cols: int
    offset: int

    @property
    def size(self) -> int:
        return self.rows * self.cols


def layout_for(spec: MLPSpec) -> list[tuple[Block, Block]]:
    """(weight, bias) blocks per layer; weights are (fan_out, fan_in) row-major."""
    out = []
    off = 0
    widths = spec.layers
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = Block(fan_out, fan_in, off)
        off += w.size
        b = Block(fan_out, 1, off)
        off += b.size
        out.append((w, b))
    return out


@dataclass
class WeightStore:
    flat: np.ndarray
    layout: list[tuple[Block, Block]]
    seed: int = 0

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        total = sum(w.size + b.size for w, b in self.layout)
        if total != self.flat.size:
            raise LayoutError(f"layout covers {total} entries but flat vector has {self.flat.size}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("weights must be finite")

    def __len__(self):
        return self.flat.size

    def copy(self) -> "WeightStore":
        return WeightStore(self.flat.copy(), list(self.layout), self.seed)

    def matrices(self):
        """Yield (W, b) numpy views per layer."""
        for w, b in self.layout:
            yield (self.flat[w.offset:w.offset + w.size].reshape(w.rows, w.cols),
                   self.flat[b.offset:b.offset + b.size])


def weight_keys(n: int) -> list[tuple]:
    return [("w", j) for j in range(n)]


def init_glorot(spec: MLPSpec, seed: int) -> WeightStore:
    rng = np.random.default_rng(seed)
    layout = layout_for(spec)
    flat = np.zeros(sum(w.size + b.size for w, b in layout))
    for w, _ in layout:
        limit = math.sqrt(6.0 / (w.cols + w.rows))
        flat[w.offset:w.offset + w.size] = rng.uniform(-limit, limit, w.size)
    return WeightStore(flat, layout, int(seed))


def register_weights(graph: Graph, weights: WeightStore) -> list[ExprNode]:
    """Register every weight as a var node keyed ``("w", j)`` and bind its value."""
    nodes = []
    for j, key in enumerate(weight_keys(len(weights))):
        if graph.has_var(key):
            n = graph.lookup(key)
            graph.bind(key, float(weights.flat[j]))
        else:
            n = graph.var(key, float(weights.flat[j]))
        nodes.append(n)
    return nodes


def forward(spec: MLPSpec, weights: WeightStore, graph: Graph,
            inputs: Sequence[ExprNode], weight_nodes: Sequence[ExprNode] | None = None) -> ExprNode:
    """Scalar network output as a graph node.

    Weight var nodes are looked up by key, registering them (bound to the
    store's values) the first time a graph sees them.
    """
    if len(inputs) != spec.input_width:
        raise WidthMismatchError(f"network expects {spec.input_width} inputs, got {len(inputs)}")
    if weight_nodes is None:
        keys = weight_keys(len(weights))
        if all(graph.has_var(k) for k in keys):
            weight_nodes = [graph.lookup(k) for k in keys]
        else:
            weight_nodes = register_weights(graph, weights)
    act = ACTIVATIONS[spec.activation]
    h = list(inputs)
    nl = len(weights.layout)
    for li, (wb, bb) in enumerate(weights.layout):
        z = []
        for r in range(wb.rows):
            base = wb.offset + r * wb.cols
            acc = weight_nodes[base] * h[0]
            for k in range(1, wb.cols):
                acc = acc + weight_nodes[base + k] * h[k]
            acc = acc + weight_nodes[bb.offset + r]
            z.append(acc)
        h = z if li == nl - 1 else [act(v) for v in z]
    return h[0]


def forward_numpy(spec: MLPSpec, weights: WeightStore, x: np.ndarray) -> np.ndarray:
    """Dense reference forward pass, ``x`` of shape (n, input_width)."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    act = np.tanh if spec.activation == "tanh" else np.sin
    mats = list(weights.matrices())
    for li, (W, b) in enumerate(mats):
        h = h @ W.T + b
        if li < len(mats) - 1:
            h = act(h)
    return h[:, 0]


# -- archive -------------------------------------------------------------------
#   magic "PINN" | u32 version | u32 spec_len | spec json | i64 seed | u64 n |
#   n x f64 little-endian | u32 crc32 of everything before it

def dumps(weights: WeightStore, spec: MLPSpec) -> bytes:
    spec_blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    body = b"".join([
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", len(spec_blob)),
        spec_blob,
        struct.pack("<q", int(weights.seed)),
        struct.pack("<Q", len(weights)),
        weights.flat.astype("<f8").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes) -> tuple[MLPSpec, WeightStore]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptArchiveError("not a weight archive (bad magic or truncated header)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version not in SUPPORTED_VERSIONS:
        raise VersionMismatchError(
            f"archive format version {version} unsupported; supported versions: {list(SUPPORTED_VERSIONS)}")
    if len(blob) < 16:
        raise CorruptArchiveError("truncated archive")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise CorruptArchiveError("checksum mismatch (archive truncated or corrupted)")
    (spec_len,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    try:
        spec_d = json.loads(blob[pos:pos + spec_len].decode())
        pos += spec_len
        seed, n = struct.unpack_from("<qQ", blob, pos)
        pos += 16
    except (ValueError, struct.error) as exc:
        raise CorruptArchiveError(f"malformed archive body: {exc}") from exc
    if pos + 8 * n + 4 != len(blob):
        raise CorruptArchiveError("archive length does not match declared parameter count")
    flat = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64)
    spec = MLPSpec.from_layers(spec_d["layers"], spec_d["activation"])
    return spec, WeightStore(flat, layout_for(spec), seed)


def save(weights: WeightStore, spec: MLPSpec, path) -> None:
    Path(path).write_bytes(dumps(weights, spec))


def load(path) -> tuple[MLPSpec, WeightStore]:
    return loads(Path(path).read_bytes())
