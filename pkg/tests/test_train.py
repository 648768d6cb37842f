import dataclasses
import math

import numpy as np
import pytest

from crispnet import camera, color, raw
from crispnet.model import DESK, ConfigError, build, variant_config
from crispnet.train import (
    LOG_HEADER,
    AblationReport,
    AblationRun,
    DatasetError,
    EvalReport,
    PatchSampler,
    TrainConfig,
    TrainingDiverged,
    baseline_report,
    evaluate,
    evaluate_model,
    evaluate_predictions,
    finetune,
    fit,
    load_split,
    run_ablation,
    step_lr,
    thread_budget,
    train,
)

TINY = dataclasses.replace(DESK, global_h=16, global_w=32)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    camera.generate_dataset(root, camera.MONITOR, count=10, seed=4, split_ratios=(0.6, 0.2, 0.2), extents=(64, 128))
    return root


def tiny_cfg(corpus, variant="global_xcit", **kw):
    base = dict(data=str(corpus), model=variant_config(variant, TINY), variant=variant, lr=1e-3, batch=2,
                epochs=2, steps_per_epoch=3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation_and_text_roundtrip():
    with pytest.raises(ConfigError, match="lr"):
        TrainConfig(lr=0).validate()
    with pytest.raises(ConfigError, match="batch"):
        TrainConfig(batch=0).validate()
    cfg = TrainConfig(data="d", variant="wb_l1", lr=3e-4, model=variant_config("wb_l1"))
    back = TrainConfig.from_text(cfg.to_text())
    assert back == cfg
    assert "model.wb_levels=1" in cfg.resolved()
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_text("nonsense=1\n")
    with pytest.raises(ConfigError, match="lr_schedule"):
        TrainConfig(lr_schedule="step").validate()


def test_step_lr_schedules():
    assert [step_lr(1e-3, "constant", s, 4) for s in (1, 4)] == [1e-3, 1e-3]
    lrs = [step_lr(1e-3, "cosine", s, 4) for s in range(1, 5)]
    assert lrs[0] == 1e-3 and lrs[2] == pytest.approx(5e-4)
    assert all(a > b > 0 for a, b in zip(lrs, lrs[1:]))


def test_thread_budget(monkeypatch):
    monkeypatch.setenv("CRISP_THREADS", "3")
    assert thread_budget() == 3
    monkeypatch.setenv("CRISP_THREADS", "x")
    with pytest.raises(ConfigError):
        thread_budget()


def test_load_split_and_missing_ids(corpus, tmp_path):
    tr = load_split(corpus, "train", TINY)
    assert len(tr) == 6
    s = tr[0]
    assert s.packed.shape == (32, 64, 4) and s.target.shape == (64, 128, 3)
    assert s.global_input.shape == (3, 16, 32)
    assert load_split(corpus, "train", variant_config("no_wb", TINY))[0].global_input is None
    with pytest.raises(DatasetError, match="manifest"):
        load_split(tmp_path, "train", TINY)
    broken = tmp_path / "broken"
    camera.generate_dataset(broken, camera.NOISELESS, count=10, seed=0, extents=(16, 16))
    victim = camera.read_manifest(broken / "manifest.tsv")[0]
    (broken / victim.raw).unlink()
    with pytest.raises(DatasetError, match=victim.id):
        load_split(broken, None, variant_config("no_wb", TINY))


def test_patch_sampler_shapes_and_alignment(corpus):
    samples = load_split(corpus, "train", TINY)
    sampler = PatchSampler(samples, TINY, batch=4, seed=1)
    x, y, wb, g = sampler.draw()
    assert x.shape == (4, 4, 32, 32) and y.shape == (4, 3, 64, 64)
    assert wb.shape == (4, 4) and g.shape == (4, 3, 16, 32)
    assert y.min() >= 0 and y.max() <= 1
    # same seed, same draws; threaded prefetch yields the same sequence
    a = [b[0] for b in PatchSampler(samples, TINY, 2, 9).batches(3)]
    b = [b[0] for b in PatchSampler(samples, TINY, 2, 9).batches(3, threads=2)]
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_eval_report_means_match_rows():
    rows = [("a", 20.0, 0.5, 3.0), ("b", 30.0, 0.7, 5.0)]
    rep = EvalReport(rows)
    assert rep.psnr == 25.0 and rep.ssim == pytest.approx(0.6, abs=1e-9) and rep.delta_e == 4.0
    parsed, means = color.parse_report(rep.to_text())
    assert abs(means[2] - rep.delta_e) < 1e-9


def test_targets_against_themselves(corpus, tmp_path):
    pred = tmp_path / "pred"
    pred.mkdir()
    for r in camera.read_manifest(corpus / "manifest.tsv"):
        if r.split == "val":
            (pred / f"{r.id}.ppm").write_bytes((corpus / r.target).read_bytes())
    rep = evaluate_predictions(pred, corpus, "val")
    assert len(rep.rows) == 2
    assert all(math.isinf(p) and s == pytest.approx(1.0) and d == 0.0 for _, p, s, d in rep.rows)


def test_evaluate_predictions_lists_missing(corpus, tmp_path):
    with pytest.raises(DatasetError, match="monitor"):
        evaluate_predictions(tmp_path, corpus, "val")


def test_baseline_is_imperfect_but_sane(corpus):
    rep = baseline_report(load_split(corpus, "val", TINY))
    assert 0 < rep.delta_e < 60


def test_train_writes_log_and_checkpoint(corpus, tmp_path):
    cfg = tiny_cfg(corpus, checkpoint=str(tmp_path / "m.crsp"), log=str(tmp_path / "m.log"))
    res = train(cfg)
    lines = (tmp_path / "m.log").read_text().splitlines()
    assert lines[0] == LOG_HEADER and len(lines) == 3
    epoch, step = lines[-1].split()[:2]
    assert (epoch, step) == ("2", "6")
    assert len(res.losses) == 6 and res.best_epoch >= 1
    assert (tmp_path / "m.crsp").read_bytes() == res.checkpoint
    # the retained checkpoint is the best-delta-E epoch
    rep = evaluate(tmp_path / "m.crsp", corpus, "val")
    logged = float(lines[res.best_epoch].split()[5])
    assert rep.delta_e == pytest.approx(logged, abs=1e-5)


def test_training_is_deterministic_and_seed_sensitive(corpus):
    a = train(tiny_cfg(corpus, "wb_l123"))
    b = train(tiny_cfg(corpus, "wb_l123"))
    assert a.checkpoint == b.checkpoint and a.log_lines == b.log_lines
    c = train(tiny_cfg(corpus, "wb_l123", seed=1))
    assert c.losses != a.losses


def test_training_reduces_loss(corpus):
    res = train(tiny_cfg(corpus, "wb_l123", epochs=1, steps_per_epoch=40, lr=2e-3))
    assert np.mean(res.losses[-10:]) < np.mean(res.losses[:5])


def test_divergence_reports_step_and_lr(corpus):
    samples = load_split(corpus, "train", TINY)
    cfg = tiny_cfg(corpus, "no_wb", epochs=1, steps_per_epoch=2)
    model = build(cfg.model, 0)
    model["enc1.c1.w"].data[:] = 1e30
    with pytest.raises(TrainingDiverged, match=r"step 1 \(lr="):
        fit(model, cfg, samples, samples[:1])


def test_finetune_zero_epochs_is_identity(corpus, tmp_path):
    ck = tmp_path / "p.crsp"
    train(tiny_cfg(corpus, "wb_l123", checkpoint=str(ck)))
    res = finetune(ck, tiny_cfg(corpus, "wb_l123", epochs=0))
    assert res.checkpoint == ck.read_bytes()


def test_finetune_rejects_other_architecture(corpus, tmp_path):
    ck = tmp_path / "p.crsp"
    train(tiny_cfg(corpus, "no_wb", epochs=1, checkpoint=str(ck)))
    with pytest.raises(Exception, match="mismatch|differs"):
        finetune(ck, tiny_cfg(corpus, "wb_l123"), expect=variant_config("wb_l123", TINY))


def test_finetune_uses_reduced_lr(corpus, tmp_path):
    ck = tmp_path / "p.crsp"
    train(tiny_cfg(corpus, "wb_l123", epochs=1, checkpoint=str(ck)))
    samples = load_split(corpus, "train", TINY)
    seen = []
    import crispnet.train as T

    orig = T.optimizer_step

    def spy(params, state, hyper):
        seen.append(hyper.lr)
        return orig(params, state, hyper)

    T.optimizer_step = spy
    try:
        finetune(ck, tiny_cfg(corpus, "wb_l123", epochs=1, steps_per_epoch=1), train_samples=samples,
                 val_samples=samples[:1])
    finally:
        T.optimizer_step = orig
    assert seen == [pytest.approx(1e-4)]


def test_untrained_model_much_worse_than_trained(corpus):
    samples = load_split(corpus, "train", TINY)
    cfg = tiny_cfg(corpus, "wb_l123", epochs=2, steps_per_epoch=60, lr=3e-3)
    untrained = evaluate_model(build(cfg.model, 0), samples[:2]).delta_e
    res = fit(build(cfg.model, 0), cfg, samples, samples[:2])
    assert untrained >= 2 * res.best_delta_e


def test_ablation_report_text_and_tsv(tmp_path):
    rep = AblationReport([AblationRun("a", s, 20.0 + s, 0.8, 5.0 + s, 1) for s in range(3)] +
                         [AblationRun("b", s, 21.0, 0.9, 4.0, 2) for s in range(3)])
    assert rep.median("a") == 6.0 and rep.variants() == ["a", "b"]
    rep.write(tmp_path / "r.txt")
    tsv = (tmp_path / "r.txt.tsv").read_text().splitlines()
    assert tsv[0].split("\t")[0] == "variant" and tsv[1].split("\t")[4] == "6.000"
    assert (tmp_path / "r.txt").read_text().splitlines()[1].startswith("a ")


def test_run_ablation_small(corpus, tmp_path):
    rep = run_ablation(["no_wb", "wb_l1"], tiny_cfg(corpus, epochs=1, steps_per_epoch=2), seeds=(0, 1),
                       work_dir=tmp_path)
    assert [(r.variant, r.seed) for r in rep.runs] == [("no_wb", 0), ("no_wb", 1), ("wb_l1", 0), ("wb_l1", 1)]
    assert (tmp_path / "wb_l1_seed1.crsp").is_file()
    with pytest.raises(ConfigError):
        run_ablation(["wb_l12345"], tiny_cfg(corpus))
