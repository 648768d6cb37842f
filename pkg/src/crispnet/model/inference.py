"""Full-frame inference by tiling, with one global feature shared across patches."""
from __future__ import annotations

import numpy as np

from .. import raw
from ..autodiff.tensor import Tensor
from .network import Model, forward, global_feature


def frame_inputs(model: Model, frame: raw.BayerFrame, meta: raw.WbMeta):
    """Packed frame (HWC), expanded gains and HWC global input for one frame."""
    cfg = model.config
    packed = raw.pack(frame)
    g = raw.global_from_packed(packed, (cfg.global_h, cfg.global_w)) if cfg.global_branch != "none" else None
    return packed, meta.expanded(), g


def infer_full(model: Model, frame: raw.BayerFrame, meta: raw.WbMeta, clamp: bool = True) -> np.ndarray:
    """Reconstruct a whole frame as an H x W x 3 sRGB float32 image.

    The global feature is computed once from the downsampled frame; each
    packed patch then runs through the reconstruction branch on its own.
    """
    cfg = model.config
    if frame.height % cfg.patch_h or frame.width % cfg.patch_w:
        raise raw.TileError(
            f"frame {frame.height}x{frame.width} is not divisible into {cfg.patch_h}x{cfg.patch_w} patches; "
            "crop the image first"
        )
    packed, wb, g = frame_inputs(model, frame, meta)
    patches, layout = raw.tile(packed, cfg.patch_h // 2, cfg.patch_w // 2)
    feature = global_feature(model, g[None].transpose(0, 3, 1, 2)) if g is not None else None
    out = []
    for p in patches:
        x = Tensor(np.ascontiguousarray(p.transpose(2, 0, 1)[None]))
        y = forward(model, x, wb[None], feature=feature).data[0].transpose(1, 2, 0)
        out.append(y)
    out_layout = raw.TileLayout(frame.height, frame.width, cfg.patch_h, cfg.patch_w, layout.positions)
    img = raw.untile(out, out_layout)
    return np.clip(img, 0.0, 1.0) if clamp else img


def seam_discontinuity(img: np.ndarray, patch_h: int, patch_w: int) -> float:
    """Mean |step| across patch seams minus mean |step| elsewhere (diagnostic only)."""
    a = np.asarray(img, dtype=np.float64)
    dy = np.abs(np.diff(a, axis=0)).mean(axis=tuple(range(1, a.ndim)))
    dx = np.abs(np.diff(a, axis=1)).mean(axis=tuple(i for i in range(a.ndim) if i != 1))
    seam_y = (np.arange(1, a.shape[0]) % patch_h) == 0
    seam_x = (np.arange(1, a.shape[1]) % patch_w) == 0
    on = np.concatenate([dy[seam_y], dx[seam_x]])
    off = np.concatenate([dy[~seam_y], dx[~seam_x]])
    if on.size == 0:
        return 0.0
    return float(on.mean() - off.mean())

