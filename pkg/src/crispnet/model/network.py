"""The three-branch network: residual-bottleneck UNet, white-balance branch, global branch."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import checkpoint, ops
from ..autodiff.tensor import Tensor
from .config import ConfigError, ModelConfig


class StructuralError(ValueError):
    pass


class CheckpointMismatchError(ValueError):
    pass


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    training: bool = False
    global_calls: int = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self, prefix: str = "") -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    def num_parameters(self, prefix: str = "") -> int:
        return sum(p.size for p in self.parameters(prefix))

    # ----------------------------------------------------------- persistence

    def state(self) -> dict[str, np.ndarray]:
        out = {n: p.data for n, p in self.params.items()}
        for n, stats in self.buffers.items():
            for k, v in stats.items():
                out[f"buffer:{n}.{k}"] = v.astype(np.float32)
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        expected = set(self.state())
        got = set(tensors)
        if expected != got:
            missing, extra = sorted(expected - got), sorted(got - expected)
            raise CheckpointMismatchError(f"checkpoint does not match architecture: missing {missing[:5]}, unexpected {extra[:5]}")
        for n, arr in tensors.items():
            if n.startswith("buffer:"):
                bn, k = n[len("buffer:"):].rsplit(".", 1)
                ref = self.buffers[bn][k]
                if ref.shape != arr.shape:
                    raise CheckpointMismatchError(f"buffer {n}: shape {arr.shape} != {ref.shape}")
                ref[...] = arr
            else:
                p = self.params[n]
                if p.shape != arr.shape:
                    raise CheckpointMismatchError(f"parameter {n}: shape {arr.shape} != {p.shape}")
                p.data = np.array(arr, dtype=np.float32)

    def save(self, path, extra_text: str = "") -> None:
        checkpoint.save(path, self.state(), self.config.to_text() + extra_text)

    def to_bytes(self) -> bytes:
        return checkpoint.dumps(self.state(), self.config.to_text())

    @classmethod
    def load(cls, path, expect: ModelConfig | None = None) -> "Model":
        tensors, text = checkpoint.load(path)
        cfg_lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        cfg = ModelConfig.from_text("\n".join(cfg_lines))
        if expect is not None and expect != cfg:
            raise CheckpointMismatchError(f"checkpoint architecture differs from the requested config:\n{cfg.to_text()}")
        model = build(cfg, seed=0)
        model.load_state(tensors)
        return model


# ------------------------------------------------------------------ construction


class _Init:
    def __init__(self, model: Model, seed: int):
        self.m = model
        self.rng = np.random.default_rng(seed)

    def _add(self, name, arr):
        if name in self.m.params:
            raise ConfigError(f"duplicate parameter {name}")
        self.m.params[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name)

    def conv(self, name, cout, cin, k, bias=True, gain=math.sqrt(2.0)):
        fan_in = cin * k * k
        bound = gain * math.sqrt(3.0 / fan_in)
        self._add(f"{name}.w", self.rng.uniform(-bound, bound, (cout, cin, k, k)))
        if bias:
            self._add(f"{name}.b", np.zeros(cout))

    def dwconv(self, name, ch, k):
        bound = math.sqrt(6.0 / (k * k))
        self._add(f"{name}.w", self.rng.uniform(-bound, bound, (ch, 1, k, k)))
        self._add(f"{name}.b", np.zeros(ch))

    def linear(self, name, cout, cin, bias=True, w_scale=1.0, b_value=0.0):
        bound = w_scale / math.sqrt(cin)
        self._add(f"{name}.w", self.rng.uniform(-bound, bound, (cout, cin)))
        if bias:
            self._add(f"{name}.b", np.full(cout, b_value))

    def norm(self, name, ch):
        self._add(f"{name}.g", np.ones(ch))
        self._add(f"{name}.b", np.zeros(ch))

    def raw(self, name, arr):
        self._add(name, np.asarray(arr, dtype=np.float64))


def build(config: ModelConfig, seed: int = 0) -> Model:
    """Create a model with deterministic initial parameters for ``seed``."""
    cfg = config.validate()
    model = Model(cfg)
    init = _Init(model, seed)
    L = cfg.levels

    for lvl in range(1, L + 1):
        cin = 4 if lvl == 1 else cfg.channels(lvl - 1)
        c = cfg.channels(lvl)
        init.conv(f"enc{lvl}.c1", c, cin, 3)
        init.conv(f"enc{lvl}.c2", c, c, 3)
    cb = cfg.bottleneck_channels
    for r in range(cfg.residual_blocks):
        init.conv(f"res{r}.c1", cb, cb, 3)
        init.conv(f"res{r}.c2", cb, cb, 3)
    for lvl in range(L - 1, 0, -1):
        c = cfg.channels(lvl)
        init.conv(f"dec{lvl}.up", c, cfg.channels(lvl + 1), 3)
        init.conv(f"dec{lvl}.c1", c, 2 * c, 3)
        init.conv(f"dec{lvl}.c2", c, c, 3)
    init.conv("out.up", 3, cfg.channels(1), 3, gain=1.0)

    # injection heads start close to the identity scaling
    for lvl in cfg.injected_levels:
        init.linear(f"wb{lvl}", cfg.channels(lvl), 4, w_scale=0.1, b_value=1.0)

    if cfg.global_branch == "xcit":
        _build_xcit(init, cfg)
    elif cfg.global_branch == "cnn":
        _build_cnn(init, cfg, model)
    return model


def _build_xcit(init: _Init, cfg: ModelConfig) -> None:
    d = cfg.xcit_embed_dim
    init.conv("xcit.embed", d, 3, cfg.xcit_patch, gain=1.0)
    k = cfg.xcit_lpi_kernel
    hidden = d * cfg.xcit_ffn_expansion
    for i in range(cfg.xcit_depth):
        p = f"xcit.blk{i}"
        init.norm(f"{p}.n1", d)
        init.linear(f"{p}.qkv", 3 * d, d)
        init.raw(f"{p}.temp", np.ones(cfg.xcit_heads))
        init.linear(f"{p}.proj", d, d)
        init.norm(f"{p}.n2", d)
        init.dwconv(f"{p}.lpi1", d, k)
        init.dwconv(f"{p}.lpi2", d, k)
        init.norm(f"{p}.n3", d)
        init.linear(f"{p}.fc1", hidden, d)
        init.linear(f"{p}.fc2", d, hidden)
    init.raw("xcit.cls", init.rng.normal(0.0, 0.02, (1, 1, d)))
    init.norm("xcit.ca.n1", d)
    init.linear("xcit.ca.q", d, d)
    init.linear("xcit.ca.kv", 2 * d, d)
    init.linear("xcit.ca.proj", d, d)
    init.norm("xcit.ca.n2", d)
    init.linear("xcit.ca.fc1", hidden, d)
    init.linear("xcit.ca.fc2", d, hidden)
    init.norm("xcit.norm", d)
    init.linear("xcit.head", cfg.global_feature_dim, d, w_scale=0.1, b_value=1.0)


def _build_cnn(init: _Init, cfg: ModelConfig, model: Model) -> None:
    c1, c2 = cfg.cnn_channels
    init.conv("cnn.c1", c1, 3, 3)
    init.norm("cnn.bn1", c1)
    init.conv("cnn.c2", c2, c1, 3)
    init.norm("cnn.bn2", c2)
    flat = c2 * (cfg.global_h // 16) * (cfg.global_w // 16)
    init.linear("cnn.fc", cfg.global_feature_dim, flat, w_scale=0.1, b_value=1.0)
    for name, c in (("cnn.bn1", c1), ("cnn.bn2", c2)):
        model.buffers[name] = {"mean": np.zeros(c), "var": np.ones(c)}


# ------------------------------------------------------------------ branches


def _conv(m: Model, name, x, stride=1, pad=1):
    b = m.params.get(f"{name}.b")
    return ops.conv2d(x, m[f"{name}.w"], b, stride=stride, pad=pad)


def _block(m: Model, name, x):
    x = ops.relu(_conv(m, f"{name}.c1", x))
    return ops.relu(_conv(m, f"{name}.c2", x))


def wb_branch(m: Model, wb) -> dict[int, Tensor]:
    """Affine, activation-free maps from the RGBG gain vector to per-level channel scales.

    ``wb`` is (4,) or (N, 4); returns level -> (N, C_level) tensors.
    """
    w = wb if isinstance(wb, Tensor) else Tensor(np.asarray(wb, dtype=np.float32))
    if w.ndim == 1:
        w = ops.reshape(w, (1, 4))
    return {lvl: ops.linear(w, m[f"wb{lvl}.w"], m[f"wb{lvl}.b"]) for lvl in m.config.injected_levels}


def reconstruct(m: Model, patch: Tensor, wb_scales: dict[int, Tensor] | None = None,
                feature: Tensor | None = None) -> Tensor:
    """UNet over packed (N, 4, h, w) patches -> (N, 3, 2h, 2w) sRGB.

    ``wb_scales`` maps encoder level to an (N, C) or (C,) vector multiplied
    into that level after its conv block; ``feature`` multiplies the
    bottleneck after the residual blocks. ``None`` disables the injection.
    """
    cfg = m.config
    L = cfg.levels
    n, c, h, w = patch.shape
    step = 2 ** (L - 1)
    if c != 4 or h % step or w % step:
        raise StructuralError(f"packed patch {patch.shape} must have 4 channels and extents divisible by {step}")
    wb_scales = wb_scales or {}
    skips = []
    x = patch
    for lvl in range(1, L + 1):
        x = _block(m, f"enc{lvl}", x)
        if lvl in wb_scales:
            x = ops.channel_mul(x, wb_scales[lvl])
        if lvl < L:
            skips.append(x)
            x = ops.maxpool2d(x)
    for r in range(cfg.residual_blocks):
        y = ops.relu(_conv(m, f"res{r}.c1", x))
        x = ops.add(x, _conv(m, f"res{r}.c2", y))
    if feature is not None:
        x = ops.channel_mul(x, feature)
    for lvl in range(L - 1, 0, -1):
        x = ops.relu(_conv(m, f"dec{lvl}.up", ops.upsample2x(x)))
        skip = skips[lvl - 1]
        if x.shape[2:] != skip.shape[2:]:
            raise StructuralError(f"decoder level {lvl}: upsampled {x.shape} does not match skip {skip.shape}")
        x = _block(m, f"dec{lvl}", ops.concat([x, skip], axis=1))
    return _conv(m, "out.up", ops.upsample2x(x))


# ------------------------------------------------------------------ XCiT branch


def _ln(m, name, x):
    return ops.layernorm(x, m[f"{name}.g"], m[f"{name}.b"], eps=1e-5)


def _lin(m, name, x):
    return ops.linear(x, m[f"{name}.w"], m.params.get(f"{name}.b"))


def xca(m: Model, prefix: str, x: Tensor, return_attention: bool = False):
    """Cross-covariance attention over (B, N, d) tokens.

    Per head, queries and keys are l2-normalised along the token axis and
    the (d_h x d_h) channel-to-channel attention ``softmax(q^T k * temp)``
    mixes value channels.
    """
    b, n, d = x.shape
    h = m.config.xcit_heads
    if d % h:
        raise ConfigError(f"embedding dim {d} not divisible by {h} heads")
    dh = d // h
    qkv = _lin(m, f"{prefix}.qkv", x)
    qkv = ops.transpose(ops.reshape(qkv, (b, n, 3, h, dh)), (2, 0, 3, 4, 1))  # (3, B, h, dh, N)
    q, k, v = (ops.reshape(ops.slice_axis(qkv, 0, i, i + 1), (b, h, dh, n)) for i in range(3))
    q = ops.l2_normalize(q, axis=-1, eps=1e-6)
    k = ops.l2_normalize(k, axis=-1, eps=1e-6)
    logits = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2)))
    logits = ops.mul(logits, ops.reshape(m[f"{prefix}.temp"], (1, h, 1, 1)))
    attn = ops.softmax(logits, axis=-1)
    out = ops.matmul(attn, v)  # (B, h, dh, N)
    out = ops.reshape(ops.transpose(out, (0, 3, 1, 2)), (b, n, d))
    out = _lin(m, f"{prefix}.proj", out)
    return (out, attn) if return_attention else out


def _lpi(m, prefix, x, grid):
    b, n, d = x.shape
    gh, gw = grid
    pad = m.config.xcit_lpi_kernel // 2
    y = ops.reshape(ops.transpose(x, (0, 2, 1)), (b, d, gh, gw))
    y = ops.gelu(ops.depthwise_conv2d(y, m[f"{prefix}.lpi1.w"], m[f"{prefix}.lpi1.b"], pad=pad))
    y = ops.depthwise_conv2d(y, m[f"{prefix}.lpi2.w"], m[f"{prefix}.lpi2.b"], pad=pad)
    return ops.transpose(ops.reshape(y, (b, d, n)), (0, 2, 1))


def _ffn(m, prefix, x):
    return _lin(m, f"{prefix}.fc2", ops.gelu(_lin(m, f"{prefix}.fc1", x)))


def sincos_2d(gh: int, gw: int, d: int) -> np.ndarray:
    q = d // 4
    omega = 1.0 / (10000 ** (np.arange(q) / max(q, 1)))
    yy, xx = np.mgrid[0:gh, 0:gw]
    parts = []
    for coord in (yy.reshape(-1), xx.reshape(-1)):
        ang = coord[:, None] * omega[None]
        parts += [np.sin(ang), np.cos(ang)]
    pe = np.concatenate(parts, axis=1)
    return np.pad(pe, ((0, 0), (0, d - pe.shape[1]))).astype(np.float32)


def xcit_embed(m: Model, g: Tensor) -> tuple[Tensor, tuple[int, int]]:
    cfg = m.config
    ps = cfg.xcit_patch
    x = ops.conv2d(g, m["xcit.embed.w"], m["xcit.embed.b"], stride=ps, pad=0)
    b, d, gh, gw = x.shape
    tokens = ops.transpose(ops.reshape(x, (b, d, gh * gw)), (0, 2, 1))
    if cfg.xcit_pos_encoding:
        tokens = ops.add(tokens, Tensor(sincos_2d(gh, gw, d)))
    return tokens, (gh, gw)


def xcit_tokens(m: Model, tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """XCiT blocks, class attention and projection, from patch tokens to F."""
    cfg = m.config
    x = tokens
    for i in range(cfg.xcit_depth):
        p = f"xcit.blk{i}"
        x = ops.add(x, xca(m, p, _ln(m, f"{p}.n1", x)))
        x = ops.add(x, _lpi(m, p, _ln(m, f"{p}.n2", x), grid))
        x = ops.add(x, _ffn(m, p, _ln(m, f"{p}.n3", x)))
    b, n, d = x.shape
    h = cfg.xcit_heads
    dh = d // h
    cls = ops.mul(Tensor(np.ones((b, 1, 1), dtype=np.float32)), m["xcit.cls"])
    z = ops.concat([cls, x], axis=1)
    u = _ln(m, "xcit.ca.n1", z)
    q = ops.transpose(ops.reshape(_lin(m, "xcit.ca.q", ops.slice_axis(u, 1, 0, 1)), (b, 1, h, dh)), (0, 2, 1, 3))
    kv = ops.reshape(_lin(m, "xcit.ca.kv", u), (b, n + 1, 2, h, dh))
    kv = ops.transpose(kv, (2, 0, 3, 1, 4))  # (2, B, h, N+1, dh)
    k = ops.reshape(ops.slice_axis(kv, 0, 0, 1), (b, h, n + 1, dh))
    v = ops.reshape(ops.slice_axis(kv, 0, 1, 2), (b, h, n + 1, dh))
    attn = ops.softmax(ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), dh ** -0.5), axis=-1)
    ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b, 1, d))
    cls = ops.add(cls, _lin(m, "xcit.ca.proj", ctx))
    cls = ops.add(cls, _ffn(m, "xcit.ca", _ln(m, "xcit.ca.n2", cls)))
    cls = _ln(m, "xcit.norm", ops.reshape(cls, (b, d)))
    return _lin(m, "xcit.head", cls)


def global_branch_xcit(m: Model, g: Tensor) -> Tensor:
    tokens, grid = xcit_embed(m, g)
    return xcit_tokens(m, tokens, grid)


# ------------------------------------------------------------------ CNN branch


def global_branch_cnn(m: Model, g: Tensor) -> Tensor:
    """Two rounds of strided conv, batch norm, ReLU and max pooling, then one linear map."""
    x = g
    for i in (1, 2):
        x = _conv(m, f"cnn.c{i}", x, stride=2, pad=1)
        x = ops.batchnorm2d(x, m[f"cnn.bn{i}.g"], m[f"cnn.bn{i}.b"], m.buffers[f"cnn.bn{i}"],
                            training=m.training)
        x = ops.maxpool2d(ops.relu(x))
    b = x.shape[0]
    return _lin(m, "cnn.fc", ops.reshape(x, (b, int(np.prod(x.shape[1:])))))


def global_feature(m: Model, g) -> Tensor | None:
    """Run the configured global branch on an (N, 3, gh, gw) or (3, gh, gw) input."""
    cfg = m.config
    if cfg.global_branch == "none":
        return None
    gt = g if isinstance(g, Tensor) else Tensor(np.asarray(g, dtype=np.float32))
    if gt.ndim == 3:
        gt = ops.reshape(gt, (1,) + gt.shape)
    if gt.shape[1:] != (3, cfg.global_h, cfg.global_w):
        raise StructuralError(f"global input must be (N, 3, {cfg.global_h}, {cfg.global_w}), got {gt.shape}")
    m.global_calls += 1
    if cfg.global_branch == "xcit":
        return global_branch_xcit(m, gt)
    return global_branch_cnn(m, gt)


def forward(m: Model, patch, wb, g=None, feature: Tensor | None = None) -> Tensor:
    """Packed patches (N, 4, h, w) + RGBG gains (N, 4) + global input -> (N, 3, 2h, 2w).

    A precomputed ``feature`` skips the global branch.
    """
    cfg = m.config
    x = patch if isinstance(patch, Tensor) else Tensor(np.asarray(patch, dtype=np.float32))
    wbt = wb if isinstance(wb, Tensor) else Tensor(np.asarray(wb, dtype=np.float32))
    if wbt.ndim == 1:
        wbt = ops.reshape(wbt, (1, 4))
    scales = None
    if cfg.wb_mode == "pre":
        x = ops.channel_mul(x, wbt if wbt.shape[0] == x.shape[0] else ops.reshape(wbt, (4,)))
    elif cfg.wb_mode == "branch" and cfg.injected_levels:
        scales = wb_branch(m, wbt)
        if wbt.shape[0] == 1 and x.shape[0] > 1:
            scales = {k: ops.reshape(v, (v.shape[1],)) for k, v in scales.items()}
    if feature is None and cfg.global_branch != "none":
        feature = global_feature(m, g)
    if feature is not None and feature.shape[0] == 1 and x.shape[0] > 1:
        feature = ops.reshape(feature, (feature.shape[1],))
    return reconstruct(m, x, scales, feature)
