"""Architecture hyperparameters and their ``key=value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


WB_MODES = ("branch", "pre", "none")
GLOBAL_BRANCHES = ("none", "cnn", "xcit")


@dataclass
class ModelConfig:
    levels: int = 3
    base_channels: int = 8
    residual_blocks: int = 3
    wb_mode: str = "branch"
    wb_levels: tuple[int, ...] = (1, 2, 3)
    global_branch: str = "xcit"
    global_h: int = 48
    global_w: int = 64
    patch_h: int = 64
    patch_w: int = 64
    xcit_depth: int = 4
    xcit_embed_dim: int = 32
    xcit_heads: int = 4
    xcit_patch: int = 8
    xcit_lpi_kernel: int = 3
    xcit_ffn_expansion: int = 4
    xcit_pos_encoding: bool = False
    cnn_channels: tuple[int, int] = (16, 32)

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2 ** (self.levels - 1)

    @property
    def global_feature_dim(self) -> int:
        return self.bottleneck_channels

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)

    @property
    def injected_levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.wb_levels)) if self.wb_mode == "branch" else ()

    def validate(self) -> "ModelConfig":
        problems = []
        if self.levels < 1:
            problems.append(f"levels must be >= 1 (got {self.levels})")
        if self.base_channels < 1:
            problems.append(f"base_channels must be >= 1 (got {self.base_channels})")
        if self.residual_blocks < 0:
            problems.append("residual_blocks must be >= 0")
        if self.wb_mode not in WB_MODES:
            problems.append(f"wb_mode must be one of {WB_MODES} (got {self.wb_mode!r})")
        if not set(self.wb_levels) <= set(range(1, self.levels + 1)):
            problems.append(f"wb_levels {self.wb_levels} must be a subset of encoder levels 1..{self.levels}")
        if self.global_branch not in GLOBAL_BRANCHES:
            problems.append(f"global_branch must be one of {GLOBAL_BRANCHES} (got {self.global_branch!r})")
        step = 2 ** self.levels
        if self.patch_h % step or self.patch_w % step:
            problems.append(
                f"patch {self.patch_h}x{self.patch_w} must pack to extents divisible by 2^(levels-1) = {step // 2}"
            )
        if self.global_branch == "xcit":
            if self.xcit_embed_dim % self.xcit_heads:
                problems.append(f"xcit_embed_dim {self.xcit_embed_dim} not divisible by heads {self.xcit_heads}")
            if self.global_h % self.xcit_patch or self.global_w % self.xcit_patch:
                problems.append(f"global input {self.global_h}x{self.global_w} not divisible by xcit_patch {self.xcit_patch}")
        if self.global_branch == "cnn" and (self.global_h % 16 or self.global_w % 16):
            problems.append(f"global input {self.global_h}x{self.global_w} must be divisible by 16 for the cnn branch")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))
        return self

    # -------------------------------------------------------------- text form

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, kv: dict[str, str]) -> "ModelConfig":
        types = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(kv) - set(types)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        values = {}
        for k, raw in kv.items():
            default = getattr(cls(), k)
            if isinstance(default, bool):
                values[k] = raw.strip().lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                values[k] = int(raw)
            elif isinstance(default, tuple):
                values[k] = tuple(int(x) for x in raw.split(",") if x.strip())
            else:
                values[k] = raw.strip()
        return cls(**values).validate()

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_dict(parse_kv(text))


def parse_kv(text: str) -> dict[str, str]:
    kv = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        kv[key.strip()] = value.strip()
    return kv


DESK = ModelConfig()
# 368x480 Bayer patches pack to 184x240, which only divides by 2^3: four levels of base 64 reach 512
FULL = ModelConfig(levels=4, base_channels=64, wb_levels=(1, 2, 3), global_h=368, global_w=480,
                   patch_h=368, patch_w=480, xcit_embed_dim=192, xcit_patch=16)

VARIANTS = {
    "no_wb": dict(wb_mode="none", wb_levels=(), global_branch="none"),
    "pre_wb": dict(wb_mode="pre", wb_levels=(), global_branch="none"),
    "wb_l1": dict(wb_mode="branch", wb_levels=(1,), global_branch="none"),
    "wb_l123": dict(wb_mode="branch", wb_levels=(1, 2, 3), global_branch="none"),
    "wb_l1234": dict(wb_mode="branch", wb_levels=(1, 2, 3, 4), global_branch="none"),
    "wb_l12345": dict(wb_mode="branch", wb_levels=(1, 2, 3, 4, 5), global_branch="none"),
    "global_none": dict(wb_mode="branch", wb_levels=(1, 2, 3), global_branch="none"),
    "global_cnn": dict(wb_mode="branch", wb_levels=(1, 2, 3), global_branch="cnn"),
    "global_xcit": dict(wb_mode="branch", wb_levels=(1, 2, 3), global_branch="xcit"),
}


def variant_config(name: str, base: ModelConfig | None = None) -> ModelConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}")
    base = base or DESK
    return dataclasses.replace(base, **VARIANTS[name]).validate()
