import json

import pytest
import torch

import tiergan.training as training
from conftest import TINY_MODEL, photo, tiny_config, train_tiny
from tiergan.errors import InvalidParameterError, OptimizationError
from tiergan.losses import LossWeights, reconstruction_loss
from tiergan.models import STRUCTURAL, StageSpec, build_stage, make_plan, plan_stage_count
from tiergan.priors import MockExtractor, StructuralDataset
from tiergan.pyramid import as_image, build_pyramid, make_schedule, resize, upsample
from tiergan.training import (StageConfig, StageResult, StructuralConfig, TrainConfig, TrainedModel, fixed_math,
                              train_semantic_stage, train_structural, train_texture_stage)


def copies_dataset(image, n=16):
    return StructuralDataset(samples=image.unsqueeze(0).repeat(n, 1, 1, 1), jittered=0, copies=n)


def structural_spec(size=(32, 32), channels=8):
    return StageSpec(index=0, kind=STRUCTURAL, input_size=size, channels=channels, pe_channels=8)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        TrainConfig(stage=StageConfig(epochs=0))
    with pytest.raises(InvalidParameterError):
        TrainConfig(structural=StructuralConfig(lr=-1))
    cfg = TrainConfig()
    assert (cfg.structural.epochs, cfg.structural.lr, cfg.structural.batch) == (10000, 1e-4, 32)
    assert (cfg.stage.epochs, cfg.stage.lr) == (2000, 5e-4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_structural_collapses_onto_single_image():
    x = resize(as_image(photo((64, 64))), (32, 32))
    cfg = TrainConfig(structural=StructuralConfig(epochs=300, lr=1e-3, batch=16))
    result = train_structural(copies_dataset(x), structural_spec(channels=16), cfg)
    with torch.no_grad():
        mean = result.generator(torch.randn(16, 8, 32, 32)).mean(0)
    assert (mean - x).abs().mean().item() < 0.2


def test_structural_nan_aborts_with_diagnostics():
    bad = torch.full((4, 3, 16, 16), float("nan"))
    ds = StructuralDataset(samples=bad, jittered=4, copies=0)
    with pytest.raises(OptimizationError) as info:
        train_structural(ds, structural_spec((16, 16)), tiny_config())
    assert info.value.iteration == 0
    with pytest.raises(InvalidParameterError):
        train_structural(StructuralDataset(torch.zeros(0, 3, 16, 16), 0, 0), structural_spec((16, 16)))


def test_loss_curves_bit_reproducible(astronaut64):
    x = resize(as_image(astronaut64), (32, 32))
    with fixed_math():
        a = train_structural(copies_dataset(x, 8), structural_spec(), tiny_config(structural_epochs=5))
        b = train_structural(copies_dataset(x, 8), structural_spec(), tiny_config(structural_epochs=5))
    assert a.losses == b.losses
    for pa, pb in zip(a.generator.parameters(), b.generator.parameters()):
        assert torch.equal(pa, pb)


# --- conv stages ------------------------------------------------------------

def stage_zero_model(image, plan_name, size, channels=8):
    """Schedule, pyramid and an (untrained, frozen) stage 0 to hang later stages on."""
    schedule = make_schedule(size, N=plan_stage_count(plan_name) - 1)
    plan = make_plan(plan_name, schedule.sizes, channels=channels)
    pyramid = build_pyramid(resize(as_image(image), size), schedule)
    model = TrainedModel(schedule, plan, pyramid)
    torch.manual_seed(0)
    gen, critic = build_stage(plan.specs[0])
    model.add_stage(StageResult(plan.specs[0], gen, critic, {}))
    return model


def test_semantic_pure_reconstruction_regression():
    model = stage_zero_model(photo((256, 256)), "St1Se6", (256, 256), channels=16)
    assert model.schedule.sizes[1] == (45, 45)
    cfg = TrainConfig(stage=StageConfig(epochs=500), d_steps=1, g_steps=1)
    weights = LossWeights(alpha1=1e4, lambda_p=0.0)
    result = train_semantic_stage(1, model.pyramid, model, None, weights, cfg)
    assert result.losses["rec"][-1] < 1e-2
    assert all(p == 0 for p in result.losses["perc"])


def test_semantic_default_weights_logs_finite_terms(astronaut64):
    model = stage_zero_model(astronaut64, "St1Se1Te1", (64, 64))
    cfg = TrainConfig(stage=StageConfig(epochs=5))
    result = train_semantic_stage(1, model.pyramid, model, MockExtractor(), LossWeights(), cfg)
    for key in ("critic", "adv", "rec", "perc", "total"):
        assert len(result.losses[key]) == 5
        assert all(torch.isfinite(torch.tensor(result.losses[key])))
    assert min(result.losses["perc"]) > 0


def test_semantic_needs_extractor_when_perceptual(astronaut64):
    model = stage_zero_model(astronaut64, "St1Se1Te1", (64, 64))
    with pytest.raises(InvalidParameterError):
        train_semantic_stage(1, model.pyramid, model, None, LossWeights(), tiny_config())
    with pytest.raises(InvalidParameterError):
        train_texture_stage(1, model.pyramid, model, LossWeights(), tiny_config())


@pytest.mark.parametrize("w", [LossWeights(), LossWeights(alpha1=3.0, lambda_p=0.7)])
def test_objective_composition_from_records(astronaut64, w):
    model = stage_zero_model(astronaut64, "St1Se1Te1", (64, 64))
    r = train_semantic_stage(1, model.pyramid, model, MockExtractor(), w, tiny_config(epochs=4))
    for adv, rec, perc, total in zip(r.losses["adv"], r.losses["rec"], r.losses["perc"], r.losses["total"]):
        assert abs(total - (adv + w.alpha1 * rec + w.lambda_p * perc)) < 1e-6 * max(1.0, abs(total))


def test_texture_stage_reconstruction(astronaut64):
    model = stage_zero_model(astronaut64, "St1Te2", (64, 64))
    pyr = model.pyramid
    baseline = reconstruction_loss(upsample(pyr[0].unsqueeze(0), model.schedule.sizes[1]).clamp(-1, 1),
                                   pyr[1].unsqueeze(0)).item()
    cfg = TrainConfig(stage=StageConfig(epochs=500), d_steps=1, g_steps=1)
    w = LossWeights()
    r = train_texture_stage(1, pyr, model, w, cfg)
    assert abs(r.losses["rec"][0] - baseline) < 1e-7
    assert r.losses["rec"][-1] < baseline
    for adv, rec, total in zip(r.losses["adv"], r.losses["rec"], r.losses["total"]):
        assert abs(total - (adv + w.alpha2 * rec)) < 1e-6 * max(1.0, abs(total))
    # reconstruction path after training is no worse than at initialization
    model.add_stage(r)
    assert reconstruction_loss(model.reconstruct_stage(1), pyr[1].unsqueeze(0)).item() <= baseline


def test_texture_stage_pure_adversarial(astronaut64):
    model = stage_zero_model(astronaut64, "St1Te2", (64, 64))
    r = train_texture_stage(1, model.pyramid, model, LossWeights(alpha2=0.0), tiny_config(epochs=5))
    assert r.losses["total"] == r.losses["adv"]


def test_lower_stages_stay_frozen(astronaut64):
    model = stage_zero_model(astronaut64, "St1Se1Te1", (64, 64))
    noise = model.noise(2, torch.Generator().manual_seed(9))
    before = model.run(0, noise=noise).clone()
    model.add_stage(train_semantic_stage(1, model.pyramid, model, MockExtractor(), LossWeights(), tiny_config(5)))
    mid = model.run(0, noise=noise, stop=2).clone()
    assert torch.equal(model.run(0, noise=noise, stop=1), before)
    model.add_stage(train_texture_stage(2, model.pyramid, model, LossWeights(), tiny_config(5)))
    assert torch.equal(model.run(0, noise=noise, stop=1), before)
    assert torch.equal(model.run(0, noise=noise, stop=2), mid)


def test_stage_order_enforced(astronaut64):
    model = stage_zero_model(astronaut64, "St1Se1Te1", (64, 64))
    with pytest.raises(InvalidParameterError):
        train_texture_stage(2, model.pyramid, model, LossWeights(), tiny_config())


# --- pipeline and persistence -----------------------------------------------

def test_pipeline_shapes(tiny_model):
    assert tiny_model.complete
    assert tiny_model.schedule.sizes == [(32, 32), (48, 48), (64, 64)]
    out = tiny_model.sample_batch(2, torch.Generator().manual_seed(0))
    assert tuple(out.shape) == (2, 3, 64, 64)
    assert len(tiny_model.records) == 3


def test_texture_first_plan_trains(astronaut64):
    model = train_tiny(astronaut64, "Te3", tiny_config(epochs=3))
    assert [s.kind for s in model.plan.specs] == ["texture"] * 3
    assert model.z_rec is not None
    assert tuple(model.sample_batch(1).shape) == (1, 3, 64, 64)


def test_checkpoint_round_trip(tiny_model, tmp_path):
    tiny_model.save(tmp_path)
    assert (tmp_path / "stage_0" / "weights").exists() and (tmp_path / "meta").exists()
    meta = json.loads((tmp_path / "meta").read_text())
    assert meta["trained_stages"] == 3 and meta["plan"]["name"] == "St1Se1Te1"
    back = TrainedModel.load(tmp_path)
    noise = tiny_model.noise(3, torch.Generator().manual_seed(1))
    with torch.no_grad():
        assert torch.equal(back.run(0, noise=noise), tiny_model.run(0, noise=noise))
    assert back.fingerprint == tiny_model.fingerprint
    assert not list(tmp_path.rglob("*.tmp"))


def test_resume_matches_uninterrupted(astronaut64, tmp_path, monkeypatch):
    cfg = tiny_config(epochs=6, structural_epochs=4)
    with fixed_math():
        full = train_tiny(astronaut64, cfg=cfg, checkpoint_dir=tmp_path / "full")

        def interrupted(*args, **kwargs):
            raise KeyboardInterrupt

        monkeypatch.setattr(training, "train_texture_stage", interrupted)
        with pytest.raises(KeyboardInterrupt):
            train_tiny(astronaut64, cfg=cfg, checkpoint_dir=tmp_path / "part")
        monkeypatch.undo()
        partial = TrainedModel.load(tmp_path / "part")
        assert partial.trained == 2
        resumed = train_tiny(astronaut64, cfg=cfg, checkpoint_dir=tmp_path / "part")
    for g_full, g_res in zip(full.generators, resumed.generators):
        for a, b in zip(g_full.state_dict().values(), g_res.state_dict().values()):
            assert torch.equal(a, b)


def test_resume_refuses_other_config(astronaut64, tmp_path):
    train_tiny(astronaut64, "St1Te2", tiny_config(epochs=2, structural_epochs=2), checkpoint_dir=tmp_path)
    with pytest.raises(InvalidParameterError):
        train_tiny(astronaut64, "St1Te2", tiny_config(epochs=3, structural_epochs=2), checkpoint_dir=tmp_path)


def test_pipeline_requires_prior_source(astronaut64):
    with pytest.raises(InvalidParameterError):
        training.train_pipeline(astronaut64, "St1Te2", tiny_config(), backend=None, model_kwargs=TINY_MODEL)
