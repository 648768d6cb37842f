"""Bayer frames, RGBG packing, tiling, global-input downsampling and file formats."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PATTERN_CODES = {"RGGB": 0}
# packed channel order (R, G1, B, G2) -> offset of that sample inside the 2x2 RGGB cell
RGGB_OFFSETS = ((0, 0), (0, 1), (1, 1), (1, 0))


class RawFormatError(ValueError):
    pass


class TileError(ValueError):
    pass


@dataclass
class BayerFrame:
    data: np.ndarray
    black_level: int = 0
    white_level: int = 65535
    pattern: str = "RGGB"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint16)
        if self.data.ndim != 2:
            raise RawFormatError(f"Bayer frame must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        if h % 2 or w % 2 or h == 0 or w == 0:
            raise RawFormatError(f"Bayer frame extents must be even and positive, got {h}x{w}")
        if not 0 <= self.black_level < self.white_level <= 65535:
            raise RawFormatError(f"invalid levels black={self.black_level} white={self.white_level}")
        if self.pattern not in PATTERN_CODES:
            raise RawFormatError(f"unsupported CFA pattern {self.pattern!r}; only RGGB is handled")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class WbMeta:
    """White-balance gains (green normalised to 1) plus capture metadata."""

    wb_r: float
    wb_b: float
    wb_g: float = 1.0
    exposure_ms: float = 10.0
    gain_iso: float = 100.0
    scene_class: int = 0
    split: str = "train"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.wb_r, self.wb_g, self.wb_b) <= 0:
            raise ValueError(f"white-balance gains must be positive, got {(self.wb_r, self.wb_g, self.wb_b)}")
        if self.wb_g != 1.0:
            self.wb_r /= self.wb_g
            self.wb_b /= self.wb_g
            self.wb_g = 1.0

    def expanded(self) -> np.ndarray:
        """The RGBG vector (r, g, b, g), matching the packed channel order."""
        return np.array([self.wb_r, self.wb_g, self.wb_b, self.wb_g], dtype=np.float32)


def normalize(frame: BayerFrame) -> np.ndarray:
    """Black/white-level normalised mosaic as float32 in [0, 1]."""
    span = float(frame.white_level - frame.black_level)
    v = (frame.data.astype(np.float64) - frame.black_level) / span
    return np.clip(v, 0.0, 1.0).astype(np.float32)


def pack_mosaic(mosaic: np.ndarray) -> np.ndarray:
    h, w = mosaic.shape
    if h % 2 or w % 2:
        raise RawFormatError(f"mosaic extents must be even, got {h}x{w}")
    return np.stack([mosaic[dy::2, dx::2] for dy, dx in RGGB_OFFSETS], axis=-1)


def pack(frame: BayerFrame) -> np.ndarray:
    """H x W mosaic -> H/2 x W/2 x 4 (R, G1, B, G2), normalised."""
    return pack_mosaic(normalize(frame))


def unpack(packed: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`pack` on normalised values."""
    packed = np.asarray(packed)
    h2, w2, c = packed.shape
    if c != 4:
        raise RawFormatError(f"packed raw must have 4 channels, got {c}")
    out = np.empty((2 * h2, 2 * w2), dtype=packed.dtype)
    for ch, (dy, dx) in enumerate(RGGB_OFFSETS):
        out[dy::2, dx::2] = packed[..., ch]
    return out


def cfa_masks(h: int, w: int) -> np.ndarray:
    """Boolean H x W x 3 masks of the sites carrying R, G and B."""
    m = np.zeros((h, w, 3), dtype=bool)
    m[0::2, 0::2, 0] = True
    m[0::2, 1::2, 1] = True
    m[1::2, 0::2, 1] = True
    m[1::2, 1::2, 2] = True
    return m


def _box3(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, ((1, 1), (1, 1)) + ((0, 0),) * (a.ndim - 2))
    h, w = a.shape[:2]
    out = np.zeros_like(a, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += p[dy:dy + h, dx:dx + w]
    return out


def demosaick_mosaic(mosaic: np.ndarray) -> np.ndarray:
    """Bilinear demosaick of a normalised RGGB mosaic (float64 H x W x 3)."""
    mosaic = np.asarray(mosaic, dtype=np.float64)
    masks = cfa_masks(*mosaic.shape)
    vals = mosaic[..., None] * masks
    interp = _box3(vals) / _box3(masks.astype(np.float64))
    return np.where(masks, vals, interp)


def bilinear_demosaick(frame: BayerFrame) -> np.ndarray:
    """Linear RGB at full resolution; sampled sites keep their value."""
    return demosaick_mosaic(normalize(frame))


@dataclass(frozen=True)
class TileLayout:
    height: int
    width: int
    patch_h: int
    patch_w: int
    positions: tuple[tuple[int, int], ...]

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch_h, self.width // self.patch_w


def tile(img: np.ndarray, patch_h: int, patch_w: int) -> tuple[list[np.ndarray], TileLayout]:
    """Split an H x W [x C] image into non-overlapping patches in row-major order."""
    h, w = img.shape[:2]
    if patch_h <= 0 or patch_w <= 0 or h % patch_h or w % patch_w:
        raise TileError(
            f"image {h}x{w} is not divisible into {patch_h}x{patch_w} patches; crop the image first"
        )
    positions = tuple((r, c) for r in range(h // patch_h) for c in range(w // patch_w))
    patches = [img[r * patch_h:(r + 1) * patch_h, c * patch_w:(c + 1) * patch_w].copy() for r, c in positions]
    return patches, TileLayout(h, w, patch_h, patch_w, positions)


def untile(patches: Sequence[np.ndarray], layout: TileLayout) -> np.ndarray:
    rows, cols = layout.grid
    if len(patches) != len(layout.positions) or len(patches) != rows * cols:
        raise TileError(f"expected {rows * cols} patches for layout, got {len(patches)}")
    first = np.asarray(patches[0])
    out = np.empty((layout.height, layout.width) + first.shape[2:], dtype=first.dtype)
    for p, (r, c) in zip(patches, layout.positions):
        p = np.asarray(p)
        if p.shape[:2] != (layout.patch_h, layout.patch_w) or p.shape[2:] != first.shape[2:]:
            raise TileError(f"patch at {(r, c)} has shape {p.shape}, layout expects {(layout.patch_h, layout.patch_w)}")
        out[r * layout.patch_h:(r + 1) * layout.patch_h, c * layout.patch_w:(c + 1) * layout.patch_w] = p
    return out


def _area_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row i averages source interval [i*n_in/n_out, (i+1)*n_in/n_out) with fractional overlap."""
    scale = n_in / n_out
    edges = np.arange(n_out + 1) * scale
    src = np.arange(n_in)
    lo = np.maximum(edges[:-1, None], src[None, :])
    hi = np.minimum(edges[1:, None], src[None, :] + 1)
    return np.clip(hi - lo, 0.0, None) / scale


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    if out_h > h or out_w > w:
        raise ValueError(f"target {out_h}x{out_w} is larger than source {h}x{w}")
    ah, aw = _area_matrix(out_h, h), _area_matrix(out_w, w)
    a = np.asarray(img, dtype=np.float64)
    rows = np.tensordot(ah, a, axes=(1, 0))  # (out_h, w, ...)
    return np.moveaxis(np.tensordot(aw, rows, axes=(1, 1)), 0, 1)


def global_from_packed(packed: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    three = np.stack([packed[..., 0], 0.5 * (packed[..., 1].astype(np.float64) + packed[..., 3]), packed[..., 2]], -1)
    return area_resize(three, *target).astype(np.float32)


def make_global_input(frame: BayerFrame, target: tuple[int, int] = (48, 64)) -> np.ndarray:
    """Fixed-size (R, mean G, B) thumbnail of the whole frame, area-averaged."""
    packed = pack(frame)
    if target[0] > packed.shape[0] or target[1] > packed.shape[1]:
        raise ValueError(f"global input {target} larger than packed frame {packed.shape[:2]}")
    return global_from_packed(packed, target)


# ----------------------------------------------------------------- file formats

_CRAW_HEADER = struct.Struct("<4sHHBHH")


def write_craw(path, frame: BayerFrame) -> None:
    header = _CRAW_HEADER.pack(b"CRAW", frame.width, frame.height, PATTERN_CODES[frame.pattern],
                               frame.black_level, frame.white_level)
    Path(path).write_bytes(header + frame.data.astype("<u2").tobytes())


def read_craw(path) -> BayerFrame:
    blob = Path(path).read_bytes()
    if len(blob) < _CRAW_HEADER.size or blob[:4] != b"CRAW":
        raise RawFormatError(f"{path}: not a CRAW file")
    _, w, h, code, black, white = _CRAW_HEADER.unpack_from(blob)
    pattern = {v: k for k, v in PATTERN_CODES.items()}.get(code)
    if pattern is None:
        raise RawFormatError(f"{path}: unknown pattern code {code}")
    n = w * h
    if len(blob) - _CRAW_HEADER.size != 2 * n:
        raise RawFormatError(f"{path}: expected {n} samples, file holds {(len(blob) - _CRAW_HEADER.size) // 2}")
    data = np.frombuffer(blob, dtype="<u2", offset=_CRAW_HEADER.size).reshape(h, w)
    return BayerFrame(data.astype(np.uint16), black, white, pattern)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6, maxval 255. Float input is taken as [0, 1]."""
    a = img if img.dtype == np.uint8 else to_uint8(img)
    h, w, c = a.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + a.tobytes())


def read_ppm(path, as_float: bool = True) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise RawFormatError(f"{path}: only binary P6 with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    a = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
    return a.astype(np.float32) / 255.0 if as_float else a.copy()


META_KEYS = ("wb_r", "wb_g", "wb_b", "exposure_ms", "gain_iso", "scene_class", "split")


def write_meta(path, meta: WbMeta) -> None:
    lines = [
        f"wb_r={meta.wb_r!r}",
        f"wb_g={meta.wb_g!r}",
        f"wb_b={meta.wb_b!r}",
        f"exposure_ms={meta.exposure_ms!r}",
        f"gain_iso={meta.gain_iso!r}",
        f"scene_class={meta.scene_class}",
        f"split={meta.split}",
    ]
    lines += [f"{k}={v}" for k, v in meta.extra.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_meta(path) -> WbMeta:
    kv = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RawFormatError(f"{path}: malformed line {line!r}")
        kv[key.strip()] = value.strip()
    missing = [k for k in ("wb_r", "wb_b") if k not in kv]
    if missing:
        raise RawFormatError(f"{path}: missing keys {missing}")
    extra = {k: v for k, v in kv.items() if k not in META_KEYS}
    return WbMeta(
        wb_r=float(kv["wb_r"]),
        wb_b=float(kv["wb_b"]),
        wb_g=float(kv.get("wb_g", 1.0)),
        exposure_ms=float(kv.get("exposure_ms", 10.0)),
        gain_iso=float(kv.get("gain_iso", 100.0)),
        scene_class=int(kv.get("scene_class", 0)),
        split=kv.get("split", "train"),
        extra=extra,
    )
