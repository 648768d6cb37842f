"""Two-phase training, evaluation and the ablation runner."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import color, raw
from .autodiff import AdamHyper, AdamState, Graph, NumericalInstabilityError, Tensor, backward, ops, optimizer_step
from .autodiff.checkpoint import CheckpointError, loads
from .camera import Record, read_manifest
from .model import DESK, ConfigError, Model, ModelConfig, build, forward, infer_full, variant_config
from .model.config import parse_kv

log = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "cosine")
LOG_HEADER = "# epoch step loss val_psnr val_ssim val_delta_e"


class DatasetError(OSError):
    pass


class TrainingDiverged(NumericalInstabilityError):
    pass


def thread_budget() -> int:
    """Worker threads allowed by ``CRISP_THREADS`` (0 means deterministic single-thread)."""
    raw_value = os.environ.get("CRISP_THREADS", "0").strip() or "0"
    try:
        return max(0, int(raw_value))
    except ValueError:
        raise ConfigError(f"CRISP_THREADS must be an integer, got {raw_value!r}") from None


# ------------------------------------------------------------------ configuration


@dataclass
class TrainConfig:
    data: str = ""
    model: ModelConfig = field(default_factory=lambda: DESK)
    variant: str = ""
    lr: float = 1e-4
    lr_schedule: str = "cosine"
    batch: int = 8
    epochs: int = 10
    steps_per_epoch: int = 100
    seed: int = 0
    deterministic: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_split: str = "val"
    val_limit: int = 0
    finetune_lr_scale: float = 0.1
    checkpoint: str = ""
    log: str = ""

    def validate(self) -> "TrainConfig":
        problems = []
        if not self.lr > 0:
            problems.append(f"lr must be > 0 (got {self.lr})")
        if self.batch < 1:
            problems.append(f"batch must be >= 1 (got {self.batch})")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            problems.append("epochs must be >= 0 and steps_per_epoch >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            problems.append(f"lr_schedule must be one of {', '.join(LR_SCHEDULES)} (got {self.lr_schedule!r})")
        if not self.finetune_lr_scale > 0:
            problems.append("finetune_lr_scale must be > 0")
        if problems:
            raise ConfigError("invalid training config: " + "; ".join(problems))
        self.model.validate()
        return self

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def resolved(self) -> str:
        """One line holding every setting, model included."""
        own = [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self) if f.name != "model"]
        model = [f"model.{ln}" for ln in self.model.to_text().split()]
        return " ".join(own + model)

    def to_text(self) -> str:
        return "\n".join(self.resolved().split(" ")) + "\n"

    @classmethod
    def from_dict(cls, kv: dict[str, str]) -> "TrainConfig":
        own = {f.name: f for f in dataclasses.fields(cls) if f.name != "model"}
        model_kv, values = {}, {}
        for k, v in kv.items():
            if k.startswith("model."):
                model_kv[k[len("model."):]] = v
            elif k in own:
                default = getattr(cls(), k)
                if isinstance(default, bool):
                    values[k] = v.strip().lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    values[k] = int(v)
                elif isinstance(default, float):
                    values[k] = float(v)
                else:
                    values[k] = v
            elif k in ModelConfig.__dataclass_fields__:
                model_kv[k] = v
            else:
                raise ConfigError(f"unknown training config key {k!r}")
        variant = values.get("variant", "")
        base = ModelConfig.from_dict(model_kv) if model_kv else DESK
        model = variant_config(variant, base) if variant else base
        return cls(model=model, **values).validate()

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return cls.from_dict(parse_kv(text))

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DatasetError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


# ------------------------------------------------------------------ data


@dataclass
class Sample:
    id: str
    frame: raw.BayerFrame
    meta: raw.WbMeta
    packed: np.ndarray  # (h, w, 4) float32
    target: np.ndarray  # (H, W, 3) uint8
    global_input: np.ndarray | None  # (3, gh, gw) float32
    scene_class: int = 0


def load_split(data_dir, split: str | None, model_cfg: ModelConfig, limit: int = 0) -> list[Sample]:
    """Load every record of ``split`` (all records if ``None``) into memory."""
    root = Path(data_dir)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise DatasetError(f"no manifest.tsv under {root}")
    records = [r for r in read_manifest(manifest) if split is None or r.split == split]
    if limit:
        records = records[:limit]
    missing = [r.id for r in records if not all((root / p).is_file() for p in (r.raw, r.target, r.meta))]
    if missing:
        raise DatasetError(f"missing files for ids: {', '.join(missing)}")
    return [_load_record(root, r, model_cfg) for r in records]


def _load_record(root: Path, rec: Record, cfg: ModelConfig) -> Sample:
    frame = raw.read_craw(root / rec.raw)
    meta = raw.read_meta(root / rec.meta)
    target = raw.read_ppm(root / rec.target, as_float=False)
    if target.shape[:2] != (frame.height, frame.width):
        raise DatasetError(f"{rec.id}: target {target.shape[:2]} does not match raw {(frame.height, frame.width)}")
    packed = raw.pack(frame)
    g = None
    if cfg.global_branch != "none":
        g = np.ascontiguousarray(raw.global_from_packed(packed, (cfg.global_h, cfg.global_w)).transpose(2, 0, 1))
    return Sample(rec.id, frame, meta, packed, target, g, rec.scene_class)


class PatchSampler:
    """Uniform (image, patch) draws with replacement from a seeded generator."""

    def __init__(self, samples: Sequence[Sample], cfg: ModelConfig, batch: int, seed: int):
        if not samples:
            raise DatasetError("training split is empty")
        self.samples = samples
        self.ph, self.pw = cfg.patch_h // 2, cfg.patch_w // 2
        h, w = samples[0].packed.shape[:2]
        if h % self.ph or w % self.pw:
            raise raw.TileError(f"packed frame {h}x{w} is not divisible into {self.ph}x{self.pw} patches; crop first")
        self.grid = (h // self.ph, w // self.pw)
        self.batch = batch
        self.rng = np.random.default_rng(seed)

    def draw(self):
        per = self.grid[0] * self.grid[1]
        picks = self.rng.integers(0, len(self.samples) * per, size=self.batch)
        xs, ys, wbs, gs = [], [], [], []
        for k in picks:
            s = self.samples[k // per]
            r, c = divmod(int(k % per), self.grid[1])
            y0, x0 = r * self.ph, c * self.pw
            xs.append(s.packed[y0:y0 + self.ph, x0:x0 + self.pw].transpose(2, 0, 1))
            t = s.target[2 * y0:2 * (y0 + self.ph), 2 * x0:2 * (x0 + self.pw)]
            ys.append(t.transpose(2, 0, 1).astype(np.float32) / 255.0)
            wbs.append(s.meta.expanded())
            if s.global_input is not None:
                gs.append(s.global_input)
        g = np.stack(gs) if gs else None
        return np.stack(xs), np.stack(ys), np.stack(wbs), g

    def batches(self, count: int, threads: int = 0) -> Iterable:
        """``count`` batches, prefetched by one worker through a bounded queue when threads > 0."""
        if threads <= 0:
            for _ in range(count):
                yield self.draw()
            return
        q: queue.Queue = queue.Queue(maxsize=max(2, threads))

        def work():
            for _ in range(count):
                q.put(self.draw())

        worker = threading.Thread(target=work, daemon=True)
        worker.start()
        for _ in range(count):
            yield q.get()
        worker.join()


# ------------------------------------------------------------------ evaluation


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float, float]]
    variant: str = ""
    split: str = "val"
    seed: int = 0

    def _mean(self, i: int) -> float:
        return color.mean_of(r[i] for r in self.rows)

    @property
    def psnr(self) -> float:
        return self._mean(1)

    @property
    def ssim(self) -> float:
        return self._mean(2)

    @property
    def delta_e(self) -> float:
        return self._mean(3)

    def to_text(self) -> str:
        head = f"# variant={self.variant or '-'} split={self.split} seed={self.seed}\n# id psnr ssim delta_e\n"
        return head + color.format_report(self.rows)

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def evaluate_model(model: Model, samples: Sequence[Sample], variant: str = "", split: str = "val",
                   seed: int = 0) -> EvalReport:
    if not samples:
        raise DatasetError(f"split {split!r} is empty")
    was_training = model.training
    model.training = False
    rows = []
    try:
        for s in samples:
            pred = infer_full(model, s.frame, s.meta, clamp=True)
            rows.append((s.id,) + color.image_metrics(pred, s.target.astype(np.float64) / 255.0))
    finally:
        model.training = was_training
    return EvalReport(rows, variant, split, seed)


def evaluate(checkpoint, data_dir, split: str = "val", limit: int = 0) -> EvalReport:
    """Load a checkpoint and score full-frame inference against the targets of ``split``."""
    model = load_model(checkpoint)
    samples = load_split(data_dir, split, model.config, limit)
    return evaluate_model(model, samples, split=split)


def evaluate_predictions(pred_dir, data_dir, split: str = "val") -> EvalReport:
    """Score ``<id>.ppm`` images in ``pred_dir`` against the targets of ``split``."""
    root = Path(data_dir)
    records = [r for r in read_manifest(root / "manifest.tsv") if r.split == split]
    if not records:
        raise DatasetError(f"split {split!r} is empty")
    missing = [r.id for r in records if not (Path(pred_dir) / f"{r.id}.ppm").is_file() or not (root / r.target).is_file()]
    if missing:
        raise DatasetError(f"missing prediction or target for ids: {', '.join(missing)}")
    rows = []
    for r in records:
        pred = raw.read_ppm(Path(pred_dir) / f"{r.id}.ppm")
        rows.append((r.id,) + color.image_metrics(pred, raw.read_ppm(root / r.target)))
    return EvalReport(rows, split=split)


def load_model(checkpoint, expect: ModelConfig | None = None) -> Model:
    try:
        return Model.load(checkpoint, expect=expect)
    except FileNotFoundError as exc:
        raise DatasetError(f"checkpoint not found: {checkpoint}") from exc
    except CheckpointError as exc:
        raise DatasetError(f"unreadable checkpoint {checkpoint}: {exc}") from exc


def baseline_report(samples: Sequence[Sample], split: str = "val") -> EvalReport:
    """Metrics of the non-learned pipeline using the exact illuminant gains."""
    from .camera import baseline_isp

    rows = []
    for s in samples:
        gains = (float(s.meta.extra.get("illum_r", s.meta.wb_r)), float(s.meta.extra.get("illum_b", s.meta.wb_b)))
        pred = baseline_isp(s.frame, gains)
        rows.append((s.id,) + color.image_metrics(pred, s.target.astype(np.float64) / 255.0))
    return EvalReport(rows, variant="baseline", split=split)


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    best: tuple[float, float, float] | None
    log_lines: list[str]
    losses: list[float]
    checkpoint: bytes

    @property
    def best_delta_e(self) -> float:
        return self.best[2] if self.best else math.nan


def _grad_norms(params: Sequence[Tensor]) -> dict[str, float]:
    return {p.name: float(np.sqrt(np.sum(p.grad.astype(np.float64) ** 2))) for p in params if p.grad is not None}


def _diverged(step: int, lr: float, norms: dict[str, float], cause: str) -> TrainingDiverged:
    top = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
    bad = [k for k, v in norms.items() if not math.isfinite(v)]
    shown = ", ".join(f"{k}={v:.3g}" for k, v in top)
    return TrainingDiverged(f"non-finite training state at step {step} (lr={lr:g}): {cause}; "
                            f"largest grad norms: {shown}; non-finite grads: {bad[:5]}")


def step_lr(base: float, schedule: str, step: int, total: int) -> float:
    """Learning rate for 1-based ``step`` of ``total``: constant, or cosine decay to zero."""
    if schedule == "constant":
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * (step - 1) / total))


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else f"{v:.6f}")


def fit(model: Model, cfg: TrainConfig, train_samples: Sequence[Sample], val_samples: Sequence[Sample],
        lr: float | None = None) -> TrainResult:
    """Adam on patch MSE, lr following ``cfg.lr_schedule``, with per-epoch validation.

    Keeps the state with the best validation delta E. The state before
    the first epoch is never selected, so the result always reflects at
    least one epoch of optimisation when ``epochs > 0``.
    """
    lr = cfg.lr if lr is None else lr
    hyper = dataclasses.replace(cfg.hyper, lr=lr)
    params = model.parameters()
    state = AdamState()
    sampler = PatchSampler(train_samples, model.config, cfg.batch, cfg.seed)
    threads = 0 if cfg.deterministic else thread_budget()
    variant = cfg.variant or "-"
    lines = [LOG_HEADER]
    losses: list[float] = []
    best_blob = model.to_bytes()
    best_epoch, best = 0, None
    step = 0
    total = cfg.epochs * cfg.steps_per_epoch
    norms: dict[str, float] = {}
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        model.training = True
        epoch_loss = 0.0
        for x, y, wb, g in sampler.batches(cfg.steps_per_epoch, threads):
            step += 1
            try:
                with Graph() as graph:
                    pred = forward(model, Tensor(x), Tensor(wb), None if g is None else Tensor(g))
                    loss = ops.mse(pred, Tensor(y))
                    backward(graph, loss, params)
            except NumericalInstabilityError as exc:
                raise _diverged(step, lr, norms, str(exc)) from exc
            finally:
                graph.clear()  # drop saved activations now rather than at the next gc cycle
            value = loss.item()
            norms = _grad_norms(params)
            if not math.isfinite(value) or not all(math.isfinite(v) for v in norms.values()):
                raise _diverged(step, lr, norms, f"loss={value}")
            optimizer_step(params, state, dataclasses.replace(hyper, lr=step_lr(lr, cfg.lr_schedule, step, total)))
            losses.append(value)
            epoch_loss += value
        model.training = False
        report = evaluate_model(model, val_samples, variant, cfg.val_split, cfg.seed)
        metrics = (report.psnr, report.ssim, report.delta_e)
        mean_loss = epoch_loss / cfg.steps_per_epoch
        lines.append(f"{epoch} {step} {mean_loss:.6e} " + " ".join(_fmt(m) for m in metrics))
        log.info("variant=%s seed=%d epoch %d loss %.5f val psnr %.3f ssim %.4f dE %.3f (%.1fs)",
                 variant, cfg.seed, epoch, mean_loss, *metrics, time.perf_counter() - t0)
        if best is None or metrics[2] < best[2]:
            best, best_epoch = metrics, epoch
            best_blob = model.to_bytes()
    if best is not None:
        model.load_state(loads(best_blob)[0])
    model.training = False
    return TrainResult(model, best_epoch, best, lines, losses, best_blob)


def _write_outputs(cfg: TrainConfig, result: TrainResult) -> None:
    if cfg.checkpoint:
        Path(cfg.checkpoint).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.checkpoint).write_bytes(result.checkpoint)
    if cfg.log:
        Path(cfg.log).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.log).write_text("\n".join(result.log_lines) + "\n", encoding="utf-8")


def train(cfg: TrainConfig, train_samples: Sequence[Sample] | None = None,
          val_samples: Sequence[Sample] | None = None) -> TrainResult:
    """Build a model from ``cfg.seed`` and train it on the dataset's train split."""
    cfg.validate()
    if train_samples is None:
        train_samples = load_split(cfg.data, "train", cfg.model)
    if val_samples is None:
        val_samples = load_split(cfg.data, cfg.val_split, cfg.model, cfg.val_limit)
    model = build(cfg.model, seed=cfg.seed)
    log.info("training %s: %d parameters, %d train / %d val images", cfg.variant or "model",
             model.num_parameters(), len(train_samples), len(val_samples))
    result = fit(model, cfg, train_samples, val_samples)
    _write_outputs(cfg, result)
    return result


def finetune(checkpoint, cfg: TrainConfig, expect: ModelConfig | None = None,
             train_samples: Sequence[Sample] | None = None,
             val_samples: Sequence[Sample] | None = None) -> TrainResult:
    """Continue training a checkpoint with a fresh optimizer at ``lr * finetune_lr_scale``.

    With zero epochs the checkpoint is returned unchanged.
    """
    cfg.validate()
    model = load_model(checkpoint, expect=expect)
    cfg = dataclasses.replace(cfg, model=model.config)
    if train_samples is None:
        train_samples = load_split(cfg.data, "train", cfg.model)
    if val_samples is None:
        val_samples = load_split(cfg.data, cfg.val_split, cfg.model, cfg.val_limit)
    result = fit(model, cfg, train_samples, val_samples, lr=cfg.lr * cfg.finetune_lr_scale)
    if cfg.epochs == 0:
        result.checkpoint = Path(checkpoint).read_bytes() if isinstance(checkpoint, (str, Path)) else result.checkpoint
    _write_outputs(cfg, result)
    return result


# ------------------------------------------------------------------ ablations


@dataclass
class AblationRun:
    variant: str
    seed: int
    psnr: float
    ssim: float
    delta_e: float
    best_epoch: int


@dataclass
class AblationReport:
    runs: list[AblationRun]

    def variants(self) -> list[str]:
        seen: list[str] = []
        for r in self.runs:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def median(self, variant: str, metric: str = "delta_e") -> float:
        vals = [getattr(r, metric) for r in self.runs if r.variant == variant]
        return float(np.median(vals)) if vals else math.nan

    def _rows(self):
        rows = []
        for v in self.variants():
            seeds = [r for r in self.runs if r.variant == v]
            per_seed = ",".join(f"{r.delta_e:.3f}" for r in seeds)
            rows.append([v, str(len(seeds)), f"{self.median(v, 'psnr'):.3f}", f"{self.median(v, 'ssim'):.4f}",
                         f"{self.median(v):.3f}", per_seed])
        return rows

    HEADER = ["variant", "seeds", "median_psnr", "median_ssim", "median_delta_e", "delta_e_per_seed"]

    def to_text(self) -> str:
        rows = [self.HEADER] + self._rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(self.HEADER))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"

    def to_tsv(self) -> str:
        return "\n".join("\t".join(r) for r in [self.HEADER] + self._rows()) + "\n"

    def write(self, path) -> None:
        p = Path(path)
        p.write_text(self.to_text(), encoding="utf-8")
        p.with_suffix(p.suffix + ".tsv").write_text(self.to_tsv(), encoding="utf-8")


def run_ablation(variants: Sequence[str], base: TrainConfig, seeds: Sequence[int] = (0, 1, 2),
                 work_dir=None, train_samples: Sequence[Sample] | None = None,
                 val_samples: Sequence[Sample] | None = None) -> AblationReport:
    """Train every variant for every seed under the same budget and report medians."""
    base.validate()
    configs = {v: variant_config(v, base.model) for v in variants}
    if train_samples is None or val_samples is None:
        # the global input is cached only when some variant needs it
        need = next((c for c in configs.values() if c.global_branch != "none"), base.model)
        train_samples = train_samples or load_split(base.data, "train", need)
        val_samples = val_samples or load_split(base.data, base.val_split, need, base.val_limit)
    runs = []
    for v in variants:
        for s in seeds:
            cfg = dataclasses.replace(base, model=configs[v], variant=v, seed=int(s))
            if work_dir is not None:
                cfg.checkpoint = str(Path(work_dir) / f"{v}_seed{s}.crsp")
                cfg.log = str(Path(work_dir) / f"{v}_seed{s}.log")
            res = train(cfg, train_samples, val_samples)
            runs.append(AblationRun(v, int(s), *res.best, res.best_epoch))
    return AblationReport(runs)
