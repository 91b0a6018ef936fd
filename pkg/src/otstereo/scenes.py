"""Synthetic layered stereo scenes with exact ground truth.

A scene is a textured background plane plus non-overlapping fronto-parallel
rectangles, each with an integer disparity and its own mean brightness. Larger disparity means closer
to the camera, so visibility in the right view is a z-buffer on disparity.
Textures live in left-image coordinates: the right view samples layer ``k``
at ``x + d_k``.

Scene files are ``key = value`` text::

    width = 256
    height = 256
    seed = 3
    noise = 0.01
    background = 4
    layer = 40 60 120 140 12     # x0 y0 x1 y1 disparity
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from otstereo.config import parse_key_values
from otstereo.imageio import StereoPair

Rect = Tuple[int, int, int, int, int]


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    seed: int = 0
    noise: float = 0.0
    background: int = 0
    layers: List[Rect] = field(default_factory=list)
    texture_sigma: float = 1.0
    # texture std and the half-range of per-layer mean brightness
    texture_contrast: float = 0.15
    layer_contrast: float = 0.2
    name: str = ""

    def validate(self) -> None:
        if self.width < 32 or self.height < 32:
            raise ValueError("scenes must be at least 32x32")
        disps = [self.background] + [lay[4] for lay in self.layers]
        if any(d < 0 or d >= self.width / 4 for d in disps):
            raise ValueError(f"disparities must lie in [0, width/4), got {disps}")
        for x0, y0, x1, y1, d in self.layers:
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
                raise ValueError(f"layer rectangle {(x0, y0, x1, y1)} is outside the image")
            if d < self.background:
                raise ValueError("a layer cannot lie behind the background")
        for a in range(len(self.layers)):
            for b in range(a + 1, len(self.layers)):
                if _overlap(self.layers[a], self.layers[b]):
                    raise ValueError(f"layers {a} and {b} overlap")

    def to_text(self) -> str:
        lines = [
            f"width = {self.width}",
            f"height = {self.height}",
            f"seed = {self.seed}",
            f"noise = {self.noise!r}",
            f"background = {self.background}",
            f"texture_sigma = {self.texture_sigma!r}",
            f"texture_contrast = {self.texture_contrast!r}",
            f"layer_contrast = {self.layer_contrast!r}",
        ]
        if self.name:
            lines.insert(0, f"name = {self.name}")
        lines += ["layer = " + " ".join(str(v) for v in lay) for lay in self.layers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SceneSpec":
        spec = cls()
        for key, value in parse_key_values(text):
            if key == "layer":
                parts = [int(v) for v in value.split()]
                if len(parts) != 5:
                    raise ValueError(f"layer needs 'x0 y0 x1 y1 disparity', got {value!r}")
                spec.layers.append(tuple(parts))
            elif key in ("width", "height", "seed", "background"):
                setattr(spec, key, int(value))
            elif key in ("noise", "texture_sigma", "texture_contrast", "layer_contrast"):
                setattr(spec, key, float(value))
            elif key == "name":
                spec.name = value
            else:
                raise ValueError(f"unknown scene key {key!r}")
        return spec


def _overlap(a: Rect, b: Rect) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _texture(rng, height, width, sigma, mean=0.5, contrast=0.15) -> np.ndarray:
    t = rng.standard_normal((height, width))
    if sigma > 0:
        t = gaussian_filter(t, sigma, mode="wrap")
    t = (t - t.mean()) / t.std()
    return np.clip(mean + contrast * t, 0.0, 1.0)


def generate_scene(spec: SceneSpec) -> StereoPair:
    spec.validate()
    h, w = spec.height, spec.width
    rng = np.random.default_rng(spec.seed)
    planes = [(0, 0, w, h, spec.background)] + list(spec.layers)
    max_d = max(p[4] for p in planes)
    means = 0.5 + rng.uniform(-spec.layer_contrast, spec.layer_contrast, len(planes))
    textures = [_texture(rng, h, w + max_d, spec.texture_sigma, m, spec.texture_contrast)
                for m in means]
    # paint back to front; ties in disparity cannot overlap (validated above)
    order = sorted(range(len(planes)), key=lambda k: planes[k][4])
    label_l = np.zeros((h, w), np.int64)
    label_r = np.zeros((h, w), np.int64)
    zbuf_r = np.full((h, w), -1)
    xs = np.arange(w)
    for k in order:
        x0, y0, x1, y1, d = planes[k]
        label_l[y0:y1, x0:x1] = k
        rx0, rx1 = max(x0 - d, 0), max(x1 - d, 0)
        if k == 0:
            rx0, rx1 = 0, w
        region = zbuf_r[y0:y1, rx0:rx1]
        front = d >= region
        label_r[y0:y1, rx0:rx1] = np.where(front, k, label_r[y0:y1, rx0:rx1])
        zbuf_r[y0:y1, rx0:rx1] = np.where(front, d, region)
    disp_of = np.array([p[4] for p in planes])
    gt = disp_of[label_l]
    rows = np.arange(h)[:, None]
    left = np.empty((h, w))
    right = np.empty((h, w))
    for k in range(len(planes)):
        mask_l = label_l == k
        left[mask_l] = textures[k][:, :w][mask_l]
        mask_r = label_r == k
        shifted = textures[k][:, disp_of[k] : disp_of[k] + w]
        right[mask_r] = shifted[mask_r]
    src = xs[None, :] - gt
    inb = src >= 0
    visible = inb & (label_r[rows, np.clip(src, 0, w - 1)] == label_l)
    if spec.noise > 0:
        left = left + rng.normal(0.0, spec.noise, left.shape)
        right = right + rng.normal(0.0, spec.noise, right.shape)
    return StereoPair(
        left=np.clip(left, 0.0, 1.0).astype(np.float32),
        right=np.clip(right, 0.0, 1.0).astype(np.float32),
        gt_disparity=gt.astype(np.float32),
        gt_occlusion=visible.astype(np.float32),
    )


@dataclass
class SuiteSpec:
    """Recipe for a list of random layered scenes."""

    scenes: int = 10
    width: int = 256
    height: int = 256
    seed: int = 0
    max_disparity: int = 40
    noise: float = 0.01
    min_layers: int = 1
    max_layers: int = 3
    texture_sigma: float = 1.0
    texture_contrast: float = 0.15
    layer_contrast: float = 0.2

    @classmethod
    def from_text(cls, text: str) -> "SuiteSpec":
        spec = cls()
        for key, value in parse_key_values(text):
            if not hasattr(spec, key):
                raise ValueError(f"unknown suite key {key!r}")
            setattr(spec, key, type(getattr(spec, key))(value))
        return spec

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.__dict__.items())

    def build(self) -> List[SceneSpec]:
        rng = np.random.default_rng(self.seed)
        out = []
        for idx in range(self.scenes):
            bg = int(rng.integers(0, max(1, self.max_disparity // 3) + 1))
            layers: List[Rect] = []
            want = int(rng.integers(self.min_layers, self.max_layers + 1))
            tries = 0
            while len(layers) < want and tries < 200:
                tries += 1
                rw = int(rng.integers(self.width // 8, self.width // 2.5))
                rh = int(rng.integers(self.height // 8, self.height // 2.5))
                x0 = int(rng.integers(0, self.width - rw))
                y0 = int(rng.integers(0, self.height - rh))
                d = int(rng.integers(bg + 4, self.max_disparity + 1))
                rect = (x0, y0, x0 + rw, y0 + rh, d)
                if not any(_overlap(rect, o) for o in layers):
                    layers.append(rect)
            out.append(SceneSpec(
                width=self.width, height=self.height, seed=self.seed * 1000 + idx,
                noise=self.noise, background=bg, layers=layers,
                texture_sigma=self.texture_sigma,
                texture_contrast=self.texture_contrast,
                layer_contrast=self.layer_contrast, name=f"scene{idx:03d}",
            ))
        return out
