"""Forward-only multi-resolution transformer over a pair of feature pyramids.

Each block runs, per pyramid level, self-attention + FFN and left/right
cross-attention + FFN (pre-norm, residual around every sublayer), then fuses
every level with its nearest-upsampled coarser neighbor through a gated
fusion layer. Levels at strides 4/8/16 attend along image rows only; the
stride-32 level uses full 2-D attention. Left and right share weights.

Weight file layout (all little-endian)::

    b"MRTW" | u32 version | u32 dim | u32 blocks | u32 heads | u32 levels
    | u32 proj_rows | [proj_rows x dim f32 projection]
    | blocks x levels x TENSORS (f32, declared order) | u32 crc32
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from otstereo.errors import FormatError, ValidationError
from otstereo.pyramid import STRIDES, FeaturePyramid, l2_normalize

MAGIC = b"MRTW"
VERSION = 1
LN_EPS = 1e-5
GATE_LOGIT_MAX = 30.0


def tensor_shapes(dim: int) -> List[Tuple[str, tuple]]:
    """Per-level tensor names and shapes, in file order."""
    c, h = dim, 4 * dim
    out = []
    for stage in ("self", "cross"):
        out += [
            (f"{stage}_ln_g", (c,)),
            (f"{stage}_ln_b", (c,)),
            (f"{stage}_q", (c, c)),
            (f"{stage}_k", (c, c)),
            (f"{stage}_v", (c, c)),
            (f"{stage}_ffn_ln_g", (c,)),
            (f"{stage}_ffn_ln_b", (c,)),
            (f"{stage}_ffn_w1", (c, h)),
            (f"{stage}_ffn_w2", (h, c)),
        ]
    out += [("gate_w", (2 * c, c)), ("gate_b", (c,)), ("res_w", (2 * c, c))]
    return out


@dataclass
class MrtWeights:
    """Parameters for ``len(blocks)`` transformer blocks.

    ``blocks[b][level]`` maps tensor names from :func:`tensor_shapes` to
    float32 arrays; ``level`` indexes :data:`STRIDES`.
    """

    dim: int
    blocks: List[List[Dict[str, np.ndarray]]] = field(default_factory=list)
    heads: int = 1
    projection: Optional[np.ndarray] = None

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def validate(self) -> None:
        if self.heads != 1:
            raise ValidationError(f"only single-head attention is supported, got {self.heads}")
        shapes = tensor_shapes(self.dim)
        for b, block in enumerate(self.blocks):
            if len(block) != len(STRIDES):
                raise ValidationError(f"block {b} has {len(block)} levels")
            for lv, params in enumerate(block):
                for name, shape in shapes:
                    t = params.get(name)
                    if t is None or t.shape != shape:
                        got = None if t is None else t.shape
                        raise ValidationError(
                            f"block {b} level {lv}: {name} has shape {got}, expected {shape}"
                        )
                    if not np.all(np.isfinite(t)):
                        raise ValidationError(f"block {b} level {lv}: {name} not finite")
        if self.projection is not None and self.projection.shape[1] != self.dim:
            raise ValidationError("projection output width must equal dim")


def generate_weights(dim: int = 32, blocks: int = 1, seed: int = 0, scale: float = 0.02,
                     gate_bias: float = 0.0, projection_rows: int = 0) -> MrtWeights:
    """Seeded random weights: Gaussian matrices of std ``scale``, unit LN gains."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(blocks):
        block = []
        for _ in STRIDES:
            params = {}
            for name, shape in tensor_shapes(dim):
                if name.endswith("_ln_g"):
                    t = np.ones(shape)
                elif name.endswith("_ln_b"):
                    t = np.zeros(shape)
                elif name == "gate_b":
                    t = np.full(shape, gate_bias)
                else:
                    t = rng.normal(0.0, scale, size=shape)
                params[name] = t.astype(np.float32)
            block.append(params)
        out.append(block)
    proj = None
    if projection_rows:
        proj = rng.normal(0.0, 1.0 / np.sqrt(projection_rows), (projection_rows, dim))
        proj = proj.astype(np.float32)
    return MrtWeights(dim=dim, blocks=out, projection=proj)


def save_weights(weights: MrtWeights, path) -> None:
    weights.validate()
    proj = weights.projection
    rows = 0 if proj is None else proj.shape[0]
    parts = [
        MAGIC,
        struct.pack("<6I", VERSION, weights.dim, weights.num_blocks, weights.heads,
                    len(STRIDES), rows),
    ]
    if proj is not None:
        parts.append(np.ascontiguousarray(proj, dtype="<f4").tobytes())
    for block in weights.blocks:
        for params in block:
            for name, _ in tensor_shapes(weights.dim):
                parts.append(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def load_weights(path) -> MrtWeights:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 + 24 + 4 or buf[:4] != MAGIC:
        raise FormatError(f"{path} is not an MRT weight file")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"checksum mismatch in {path}")
    version, dim, nblocks, heads, nlevels, rows = struct.unpack("<6I", body[4:28])
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    if nlevels != len(STRIDES):
        raise FormatError(f"weight file has {nlevels} levels, expected {len(STRIDES)}")
    pos = 28

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape)) * 4
        if pos + n > len(body):
            raise FormatError(f"weight file {path} is truncated")
        t = np.frombuffer(body, dtype="<f4", count=n // 4, offset=pos)
        pos += n
        return t.reshape(shape).astype(np.float32)

    proj = take((rows, dim)) if rows else None
    shapes = tensor_shapes(dim)
    blocks = [
        [{name: take(shape) for name, shape in shapes} for _ in range(nlevels)]
        for _ in range(nblocks)
    ]
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes in {path}")
    weights = MrtWeights(dim=dim, blocks=blocks, heads=heads, projection=proj)
    weights.validate()
    return weights


@dataclass(frozen=True)
class AttentionSpec:
    stride: int
    axis: str

    def __post_init__(self):
        if self.axis not in ("horizontal_1d", "full_2d"):
            raise ValueError(f"unknown attention axis {self.axis!r}")
        if (self.axis == "full_2d") != (self.stride == STRIDES[-1]):
            raise ValueError("full 2-D attention is reserved for the coarsest level")

    @classmethod
    def for_stride(cls, stride: int) -> "AttentionSpec":
        return cls(stride, "full_2d" if stride == STRIDES[-1] else "horizontal_1d")


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention(q_map, k_map, v_map, spec: AttentionSpec, return_weights: bool = False):
    """Single-head scaled dot-product attention on ``(H, W, C)`` maps.

    ``horizontal_1d`` lets each query see only keys in its own row;
    ``full_2d`` lets it see the whole map.
    """
    q, k, v = (np.asarray(m, dtype=np.float64) for m in (q_map, k_map, v_map))
    if not (q.shape == k.shape and k.shape[:2] == v.shape[:2]) or q.ndim != 3:
        raise ValueError(f"attention shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    h, w, c = q.shape
    if spec.axis == "full_2d":
        q, k, v = (m.reshape(1, h * w, -1) for m in (q, k, v))
    probs = _softmax(np.matmul(q, k.transpose(0, 2, 1)) / np.sqrt(c))
    out = np.matmul(probs, v).reshape(h, w, -1)
    return (out, probs) if return_weights else out


def agfl_fuse(x, y, gate_w, gate_b, res_w, return_gate: bool = False):
    """Gated convex fusion of ``x`` and ``y`` plus a linear residual of both."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"fusion inputs differ in shape: {x.shape} vs {y.shape}")
    cat = np.concatenate([x, y], axis=-1)
    # a clamped logit keeps the gate strictly inside (0, 1) in float64
    gate = expit(np.clip(cat @ gate_w + gate_b, -GATE_LOGIT_MAX, GATE_LOGIT_MAX))
    z = gate * x + (1.0 - gate) * y + cat @ res_w
    return (z, gate) if return_gate else z


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def positional_encoding(h: int, w: int, dim: int, full_2d: bool) -> np.ndarray:
    """Fixed sinusoidal codes; column index only, or column + row halves in 2-D."""

    def sincos(pos, n):
        idx = np.arange(n)
        ang = pos[:, None] * (10000.0 ** (-2.0 * (idx // 2) / n))[None, :]
        return np.where(idx % 2 == 0, np.sin(ang), np.cos(ang))

    if not full_2d:
        return np.broadcast_to(sincos(np.arange(w, dtype=float), dim)[None], (h, w, dim))
    half = dim // 2
    px = sincos(np.arange(w, dtype=float), half)
    py = sincos(np.arange(h, dtype=float), dim - half)
    return np.concatenate(
        [np.broadcast_to(px[None], (h, w, half)), np.broadcast_to(py[:, None], (h, w, dim - half))],
        axis=-1,
    )


def _attend(x, src, p, stage, spec, pe):
    hx = layer_norm(x, p[f"{stage}_ln_g"], p[f"{stage}_ln_b"])
    hs = hx if src is None else layer_norm(src, p[f"{stage}_ln_g"], p[f"{stage}_ln_b"])
    q = (hx + pe) @ p[f"{stage}_q"]
    k = (hs + pe) @ p[f"{stage}_k"]
    v = hs @ p[f"{stage}_v"]
    return x + attention(q, k, v, spec)


def _ffn(x, p, stage):
    h = layer_norm(x, p[f"{stage}_ffn_ln_g"], p[f"{stage}_ffn_ln_b"])
    return x + np.maximum(h @ p[f"{stage}_ffn_w1"], 0.0) @ p[f"{stage}_ffn_w2"]


def upsample_nearest(coarse: np.ndarray, shape) -> np.ndarray:
    rows = np.arange(shape[0]) // 2
    cols = np.arange(shape[1]) // 2
    return coarse[rows][:, cols]


def _block(left, right, block):
    new_l, new_r = [], []
    for lv, (xl, xr) in enumerate(zip(left, right)):
        p = {k: v.astype(np.float64) for k, v in block[lv].items()}
        spec = AttentionSpec.for_stride(STRIDES[lv])
        h, w, c = xl.shape
        pe = positional_encoding(h, w, c, spec.axis == "full_2d")
        xl = _ffn(_attend(xl, None, p, "self", spec, pe), p, "self")
        xr = _ffn(_attend(xr, None, p, "self", spec, pe), p, "self")
        xl, xr = (_attend(xl, xr, p, "cross", spec, pe),
                  _attend(xr, xl, p, "cross", spec, pe))
        new_l.append(_ffn(xl, p, "cross"))
        new_r.append(_ffn(xr, p, "cross"))
    out = []
    for levels in (new_l, new_r):
        fused = []
        for lv, x in enumerate(levels):
            y = x if lv == len(levels) - 1 else upsample_nearest(levels[lv + 1], x.shape)
            p = block[lv]
            fused.append(agfl_fuse(x, y, p["gate_w"], p["gate_b"], p["res_w"]))
        out.append(fused)
    return out


def mrt_forward(left: FeaturePyramid, right: FeaturePyramid,
                weights: MrtWeights) -> Tuple[FeaturePyramid, FeaturePyramid]:
    if left.strides != STRIDES or right.strides != STRIDES:
        raise ValidationError("pyramids must use the standard strides")
    for a, b in zip(left.levels, right.levels):
        if a.shape != b.shape:
            raise ValidationError(f"left/right level shapes differ: {a.shape} vs {b.shape}")
        if a.shape[-1] != weights.dim:
            raise ValidationError(f"feature dim {a.shape[-1]} != weight dim {weights.dim}")
    weights.validate()
    if weights.num_blocks == 0:
        return left, right
    xl = [lv.astype(np.float64) for lv in left.levels]
    xr = [lv.astype(np.float64) for lv in right.levels]
    for block in weights.blocks:
        xl, xr = _block(xl, xr, block)
    return (FeaturePyramid([l2_normalize(x) for x in xl]),
            FeaturePyramid([l2_normalize(x) for x in xr]))
