"""Synthetic sensor and scene-dependent reference ISP.

Produces (raw, metadata, sRGB target) triples whose target depends on the
exact illuminant and on a global scene class, so that white-balance
metadata and whole-frame context carry measurable information.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import gaussian_filter

from . import color
from .raw import BayerFrame, WbMeta, bilinear_demosaick, cfa_masks, write_craw, write_meta, write_ppm

log = logging.getLogger(__name__)

# Sensor colour response: rows sum to 1, 15% of each channel leaks into the others.
SENSOR_MATRIX = np.array(
    [
        [0.85, 0.10, 0.05],
        [0.075, 0.85, 0.075],
        [0.05, 0.10, 0.85],
    ]
)
SENSOR_MATRIX_INV = np.linalg.inv(SENSOR_MATRIX)

BLACK_LEVEL = 1024
WHITE_LEVEL = 65535
GAIN_RANGE = (0.4, 2.5)
WB_META_JITTER = 0.02
# fraction of the illuminant cast the reference ISP deliberately keeps (0 = full adaptation)
AMBIENCE = 0.3

CLASS_RENDER = {
    0: {"saturation": 0.90, "gamma": 0.95},
    1: {"saturation": 1.25},
}
# monotone shadow lift used for class 1, applied per channel on linear values
SHADOW_KNOTS = np.array([[0.0, 0.0], [0.05, 0.075], [0.2, 0.25], [0.5, 0.54], [1.0, 1.0]])
_shadow_lift = PchipInterpolator(SHADOW_KNOTS[:, 0], SHADOW_KNOTS[:, 1])

ISO_CHOICES = (100.0, 200.0, 400.0, 800.0)
DEFAULT_EXTENTS = (192, 256)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    scene_class: int
    gain_r: float
    gain_b: float
    exposure_ms: float = 10.0
    gain_iso: float = 100.0

    def __post_init__(self):
        lo, hi = GAIN_RANGE
        if not (lo <= self.gain_r <= hi and lo <= self.gain_b <= hi):
            raise ValueError(f"illuminant gains must lie in {GAIN_RANGE}, got {(self.gain_r, self.gain_b)}")
        if self.scene_class not in (0, 1):
            raise ValueError(f"scene_class must be 0 or 1, got {self.scene_class}")

    @property
    def gains(self) -> np.ndarray:
        return np.array([self.gain_r, 1.0, self.gain_b])


@dataclass(frozen=True)
class Profile:
    name: str
    detail_sigma: float
    noise_scale: float
    counts: tuple[int, int, int]

    @property
    def count(self) -> int:
        return sum(self.counts)

    @property
    def ratios(self) -> tuple[float, float, float]:
        n = self.count
        return tuple(c / n for c in self.counts)  # type: ignore[return-value]


MONITOR = Profile("monitor", detail_sigma=1.2, noise_scale=0.5, counts=(600, 75, 75))
REAL = Profile("real", detail_sigma=0.0, noise_scale=1.0, counts=(160, 19, 19))
NOISELESS = Profile("noiseless", detail_sigma=0.0, noise_scale=0.0, counts=(8, 1, 1))
PROFILES = {p.name: p for p in (MONITOR, REAL, NOISELESS)}


# stream id for the split permutation, outside the range of image ids
SPLIT_STREAM = 2 ** 32 - 1


def derive_seed(base_seed: int, image_id: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(image_id)]).generate_state(1)[0])


def sample_scene(base_seed: int, image_id: int) -> SceneSpec:
    seed = derive_seed(base_seed, image_id)
    rng = np.random.default_rng(seed)
    lo, hi = np.log(GAIN_RANGE)
    g_r, g_b = np.exp(rng.uniform(lo, hi, 2))
    return SceneSpec(
        seed=seed,
        scene_class=int(rng.integers(0, 2)),
        gain_r=float(g_r),
        gain_b=float(g_b),
        exposure_ms=float(np.round(rng.uniform(2.0, 40.0), 2)),
        gain_iso=float(rng.choice(ISO_CHOICES)),
    )


# ------------------------------------------------------------------ scene rendering

# (hue range in degrees, saturation range, value range); hue wraps modulo 360
_PALETTES = {
    0: [((90, 150), (0.35, 0.8), (0.25, 0.7)), ((185, 240), (0.3, 0.85), (0.35, 0.85))],
    1: [((0, 45), (0.45, 0.9), (0.35, 0.85)), ((15, 35), (0.3, 0.55), (0.5, 0.9)), ((45, 60), (0.5, 0.9), (0.5, 0.9))],
}
# probability that a region takes its colour from the other class's palette
_CROSS_PALETTE = 0.3


def _hsv_to_srgb(h, s, v):
    h = (h % 360.0) / 60.0
    c = v * s
    x = c * (1 - abs(h % 2 - 1))
    m = v - c
    k = int(h) % 6
    rgb = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][k]
    return np.array(rgb) + m


def _palette_color(rng, cls):
    pal = _PALETTES[cls if rng.random() > _CROSS_PALETTE else 1 - cls]
    (h0, h1), (s0, s1), (v0, v1) = pal[rng.integers(len(pal))]
    srgb = _hsv_to_srgb(rng.uniform(h0, h1), rng.uniform(s0, s1), rng.uniform(v0, v1))
    return color.srgb_decode(srgb)


def _smooth_field(rng, h, w, amp, n_waves=3):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    f = np.zeros((h, w))
    for _ in range(n_waves):
        fy, fx = rng.uniform(0.3, 2.0, 2)
        f += np.cos(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    return 1.0 + amp * f / n_waves


def render_scene(spec: SceneSpec, extents: tuple[int, int] = DEFAULT_EXTENTS) -> np.ndarray:
    """Deterministic linear-RGB scene in [0, 1].

    Class 0 ("landscape") is laid out as a sky gradient over horizontal
    ground bands; class 1 ("portrait") as a large central subject over a
    smooth backdrop. Both add random discs and boxes whose colours follow
    the class palette most of the time, then a low-frequency shading field
    and a fine texture.
    """
    h, w = extents
    if h % 2 or w % 2:
        raise ValueError(f"scene extents must be even, got {extents}")
    rng = np.random.default_rng(spec.seed)
    cls = spec.scene_class
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.empty((h, w, 3))

    if cls == 0:
        horizon = rng.uniform(0.3, 0.55) * h
        top, bottom = _palette_color(rng, cls), _palette_color(rng, cls)
        t = np.clip(yy / horizon, 0, 1)[..., None]
        img[:] = top * (1 - t) + bottom * t
        n_bands = int(rng.integers(2, 5))
        edges = np.sort(rng.uniform(horizon, h, n_bands))
        for e in edges:
            wobble = 4 * np.sin(2 * np.pi * xx / w * rng.uniform(0.5, 2) + rng.uniform(0, 6))
            img[yy + wobble > e] = _palette_color(rng, cls)
    else:
        img[:] = _palette_color(rng, cls)
        other = _palette_color(rng, cls)
        t = (xx / w)[..., None]
        img[:] = img * (1 - t) + other * t
        cy, cx = h * rng.uniform(0.4, 0.6), w * rng.uniform(0.35, 0.65)
        ry, rx = h * rng.uniform(0.25, 0.4), w * rng.uniform(0.15, 0.28)
        subject = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
        img[subject] = _palette_color(rng, cls)

    for _ in range(int(rng.integers(6, 14))):
        c = _palette_color(rng, cls)
        py, px = rng.uniform(0, h), rng.uniform(0, w)
        size = rng.uniform(0.04, 0.14) * max(h, w)
        if rng.random() < 0.5:
            mask = (yy - py) ** 2 + (xx - px) ** 2 < size ** 2
        else:
            mask = (np.abs(yy - py) < size * rng.uniform(0.4, 1)) & (np.abs(xx - px) < size * rng.uniform(0.4, 1))
        img[mask] = c

    img *= _smooth_field(rng, h, w, amp=0.25)[..., None]
    texture = gaussian_filter(rng.standard_normal((h, w)), 0.7)
    img *= (1.0 + 0.12 * texture / texture.std())[..., None]
    return np.clip(img, 0.0, 1.0)


# ------------------------------------------------------------------ sensor model


def camera_forward(scene: np.ndarray, spec: SceneSpec, profile: Profile, rng=None,
                   sensor_matrix: np.ndarray = SENSOR_MATRIX) -> tuple[BayerFrame, WbMeta]:
    """Simulate blur, colour crosstalk, illuminant cast, mosaicking, noise and quantisation."""
    if rng is None:
        rng = np.random.default_rng(spec.seed ^ 0x5EED)
    lin = np.asarray(scene, dtype=np.float64)
    if profile.detail_sigma > 0:
        lin = gaussian_filter(lin, sigma=(profile.detail_sigma, profile.detail_sigma, 0), mode="reflect")
    lin = lin @ np.asarray(sensor_matrix).T
    lin = lin / spec.gains
    masks = cfa_masks(*lin.shape[:2])
    mosaic = np.sum(lin * masks, axis=-1)
    if profile.noise_scale > 0:
        shot = 1e-4 * profile.noise_scale * spec.gain_iso / 100.0
        read = 5e-4 * profile.noise_scale * spec.gain_iso / 100.0
        mosaic = shot * rng.poisson(np.clip(mosaic, 0, None) / shot) + rng.normal(0.0, read, mosaic.shape)
    span = WHITE_LEVEL - BLACK_LEVEL
    samples = np.round(BLACK_LEVEL + np.clip(mosaic, 0.0, 1.0) * span).astype(np.uint16)
    frame = BayerFrame(samples, BLACK_LEVEL, WHITE_LEVEL, "RGGB")
    jitter = rng.uniform(1 - WB_META_JITTER, 1 + WB_META_JITTER, 2)
    meta = WbMeta(
        wb_r=float(spec.gain_r * jitter[0]),
        wb_b=float(spec.gain_b * jitter[1]),
        exposure_ms=spec.exposure_ms,
        gain_iso=spec.gain_iso,
        scene_class=spec.scene_class,
        extra={"illum_r": repr(spec.gain_r), "illum_b": repr(spec.gain_b)},
    )
    return frame, meta


# ------------------------------------------------------------------ reference ISP


def _saturate(lin, factor):
    y = lin @ color.LUMA_709
    return y[..., None] + factor * (lin - y[..., None])


def render_class(lin: np.ndarray, scene_class: int) -> np.ndarray:
    """Scene-class-dependent colour rendering on linear RGB (output linear, clipped)."""
    cfg = CLASS_RENDER[scene_class]
    out = np.clip(_saturate(np.clip(lin, 0, 1), cfg["saturation"]), 0.0, 1.0)
    if scene_class == 0:
        return out ** cfg["gamma"]
    return np.clip(_shadow_lift(out), 0.0, 1.0)


def balance(lin: np.ndarray, gains) -> np.ndarray:
    """Apply white-balance gains and undo the sensor crosstalk."""
    g = np.array([gains[0], 1.0, gains[-1]], dtype=np.float64)
    return (lin * g) @ SENSOR_MATRIX_INV.T


def legacy_isp(frame: BayerFrame, gains, scene_class: int, ambience: float = AMBIENCE) -> np.ndarray:
    """Reference sRGB rendering of ``frame`` (the training target).

    ``gains`` are the exact illuminant gains (r, b), not the jittered
    metadata. After balancing, ``ambience`` re-applies that fraction of the
    illuminant cast (an identity for unit gains).
    """
    g_r, g_b = float(gains[0]), float(gains[-1])
    lin = balance(bilinear_demosaick(frame), (g_r, g_b))
    lin = lin * np.array([g_r ** -ambience, 1.0, g_b ** -ambience])
    return np.clip(color.srgb_encode(render_class(lin, scene_class)), 0.0, 1.0)


def baseline_isp(frame: BayerFrame, gains) -> np.ndarray:
    """Non-learned pipeline: demosaick, exact gains, crosstalk inverse, sRGB gamma."""
    lin = balance(bilinear_demosaick(frame), gains)
    return np.clip(color.srgb_encode(np.clip(lin, 0, 1)), 0.0, 1.0)


# ------------------------------------------------------------------ datasets


@dataclass(frozen=True)
class Record:
    id: str
    split: str
    scene_class: int
    raw: str
    target: str
    meta: str


def split_counts(count: int, ratios) -> tuple[int, int, int]:
    r = np.asarray(ratios, dtype=np.float64)
    r = r / r.sum()
    n_train = int(round(count * r[0]))
    n_test = int(round(count * r[1]))
    return n_train, n_test, count - n_train - n_test


def write_manifest(path, records) -> None:
    lines = [f"{r.id}\t{r.split}\t{r.scene_class}\t{r.raw}\t{r.target}\t{r.meta}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[Record]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rid, split, cls, raw, target, meta = line.split("\t")
        records.append(Record(rid, split, int(cls), raw, target, meta))
    return records


def generate_dataset(out_dir, profile: Profile, count: int | None = None, seed: int = 0, split_ratios=None,
                     extents: tuple[int, int] = DEFAULT_EXTENTS) -> list[Record]:
    """Write raw/target/meta files plus ``manifest.tsv`` under ``out_dir``."""
    count = profile.count if count is None else int(count)
    if count < 10:
        raise ValueError(f"count must be at least 10, got {count}")
    ratios = profile.ratios if split_ratios is None else split_ratios
    n_train, n_test, n_val = split_counts(count, ratios)
    out = Path(out_dir)
    for sub in ("raw", "target", "meta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    order = np.random.default_rng(derive_seed(seed, SPLIT_STREAM)).permutation(count)
    splits = np.empty(count, dtype=object)
    splits[order[:n_train]] = "train"
    splits[order[n_train:n_train + n_test]] = "test"
    splits[order[n_train + n_test:]] = "val"

    records = []
    for i in range(count):
        spec = sample_scene(seed, i)
        scene = render_scene(spec, extents)
        frame, meta = camera_forward(scene, spec, profile)
        meta.split = str(splits[i])
        target = legacy_isp(frame, (spec.gain_r, spec.gain_b), spec.scene_class)
        rid = f"{profile.name}{i:05d}"
        rec = Record(rid, meta.split, spec.scene_class, f"raw/{rid}.craw", f"target/{rid}.ppm", f"meta/{rid}.txt")
        write_craw(out / rec.raw, frame)
        write_ppm(out / rec.target, target)
        write_meta(out / rec.meta, meta)
        records.append(rec)
    write_manifest(out / "manifest.tsv", records)
    log.info("wrote %d %s images to %s (%d/%d/%d)", count, profile.name, out, n_train, n_test, n_val)
    return records
