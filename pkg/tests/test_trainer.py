import numpy as np
import pytest

from jetgen.model import JetConfig
from jetgen.synthgen import ClassBalancedSampler, CorpusSpec, generate_corpus
from jetgen.trainer import (CheckpointFormatError, OptimState, TrainConfig, adamw_step, decode_checkpoint,
                            desk_train_config, ema_update, encode_checkpoint, format_log, load_checkpoint,
                            lr_schedule, save_checkpoint, step_lr, train, train_step)

MODEL = JetConfig(channels=2, samples=32, patch_size=8, embed_dim=16, depth=1, heads=2, num_classes=3,
                  time_freq_dim=8)


@pytest.fixture(scope="module")
def tiny_data():
    spec = CorpusSpec(counts=(12, 6, 2), channels=2, samples=32, seed=4)
    return generate_corpus(spec)


def _cfg(**kw):
    base = dict(lr=1e-3, batch_size=4, epochs=2, warmup_epochs=1.0, ema_decay=0.9, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_adamw_zero_grads_no_decay_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    new, _ = adamw_step(p, {"w": np.zeros(2)}, OptimState.zeros_like(p), _cfg(weight_decay=0.0))
    np.testing.assert_array_equal(new["w"], p["w"])


def test_adamw_first_step_moves_by_lr():
    p = {"w": np.array([0.5])}
    cfg = _cfg(weight_decay=0.0, lr=0.01)
    for g in (3.0, -0.2):
        new, st = adamw_step(p, {"w": np.array([g])}, OptimState.zeros_like(p), cfg)
        assert new["w"][0] - 0.5 == pytest.approx(-0.01 * np.sign(g), rel=1e-6)
        assert st.step == 1


def test_adamw_decoupled_decay():
    p = {"w": np.array([2.0, -4.0]), "class_table": np.array([1.0])}
    cfg = _cfg(weight_decay=0.1, lr=0.01)
    new, _ = adamw_step(p, {k: np.zeros_like(v) for k, v in p.items()}, OptimState.zeros_like(p), cfg)
    np.testing.assert_allclose(new["w"], p["w"] * (1 - 0.01 * 0.1))
    assert new["class_table"][0] == 1.0  # embedding tables are exempt


def test_adamw_non_finite_grad_names_parameter():
    p = {"a": np.zeros(2), "b": np.zeros(1)}
    with pytest.raises(FloatingPointError, match="'b'"):
        adamw_step(p, {"a": np.zeros(2), "b": np.array([np.nan])}, OptimState.zeros_like(p), _cfg())


def test_lr_schedule():
    cfg = _cfg(lr=0.1, warmup_epochs=5.0)
    assert lr_schedule(0.0, cfg) == 0.0
    assert lr_schedule(2.5, cfg) == pytest.approx(0.05)
    assert lr_schedule(5.0, cfg) == 0.1 and lr_schedule(50.0, cfg) == 0.1
    assert lr_schedule(0.0, _cfg(lr=0.1, warmup_epochs=0.0)) == 0.1
    assert 0 < step_lr(0, 10, cfg) < 0.1


def test_ema_update():
    e, p = {"w": np.array([1.0])}, {"w": np.array([3.0])}
    assert ema_update(e, p, 0.0)["w"][0] == 3.0
    assert ema_update(e, p, 1.0)["w"][0] == 1.0
    cur = e
    for k in range(1, 6):
        cur = ema_update(cur, p, 0.5)
        assert cur["w"][0] - 3.0 == pytest.approx(-2.0 * 0.5 ** k)
    with pytest.raises(ValueError):
        ema_update({"w": np.zeros(2)}, p, 0.5)


def test_config_validation():
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError, match="ema_decay"):
        TrainConfig(ema_decay=1.0)
    with pytest.raises(ValueError, match="betas"):
        TrainConfig(betas=(0.9, 1.0))


def test_desk_recipe():
    cfg = desk_train_config()
    assert cfg.batch_size == 32 and cfg.ema_decay == 0.999
    assert 2000 <= cfg.total_steps(600) <= 10000
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_training_is_deterministic(tiny_data):
    a = train(_cfg(), tiny_data, model=MODEL)
    b = train(_cfg(), tiny_data, model=MODEL)
    assert format_log(a.log) == format_log(b.log)
    assert encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint)
    assert len(a.log) == 2 * 5
    assert format_log(a.log).splitlines()[0] == "step,recon,cons,tv,corr,total,lr"


def test_resume_reproduces_uninterrupted_run(tiny_data, tmp_path):
    full = train(_cfg(), tiny_data, model=MODEL)
    first = train(_cfg(), tiny_data, model=MODEL, until=3)
    path = save_checkpoint(tmp_path / "mid.jetc", first.checkpoint)
    rest = train(_cfg(), tiny_data, resume=load_checkpoint(path))
    assert format_log(first.log + rest.log) == format_log(full.log)
    assert encode_checkpoint(rest.checkpoint) == encode_checkpoint(full.checkpoint)


def test_ema_equals_params_when_decay_zero(tiny_data):
    ck = train(_cfg(ema_decay=0.0), tiny_data, model=MODEL).checkpoint
    for k in ck.params:
        np.testing.assert_array_equal(ck.ema[k], ck.params[k])


def test_label_drop_one_freezes_class_rows(tiny_data):
    params = train(_cfg(epochs=0), tiny_data, model=MODEL).checkpoint.params
    rng = np.random.default_rng(0)
    for _ in range(3):
        idx = rng.integers(0, len(tiny_data), size=4)
        _, grads = train_step(params, tiny_data.data[idx], tiny_data.labels[idx], MODEL, _cfg(label_drop=1.0), rng)
        assert not grads["class_table"][:MODEL.num_classes].any()


def test_checkpoint_round_trip(tiny_data, tmp_path):
    ck = train(_cfg(), tiny_data, model=MODEL).checkpoint
    raw = encode_checkpoint(ck)
    assert raw[:8] == b"JETC0001"
    assert encode_checkpoint(decode_checkpoint(raw)) == raw
    again = load_checkpoint(save_checkpoint(tmp_path / "c.jetc", decode_checkpoint(raw)))
    assert encode_checkpoint(again) == raw


def test_checkpoint_corruption_rejected(tiny_data):
    raw = encode_checkpoint(train(_cfg(epochs=0), tiny_data, model=MODEL).checkpoint)
    with pytest.raises(CheckpointFormatError, match="magic"):
        decode_checkpoint(b"BAD!" + raw[4:])
    for cut in (20, len(raw) // 2, len(raw) - 1):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(raw[:cut])


def test_balanced_batches_follow_sampler_law():
    labels = np.repeat([0, 1, 2], [430, 128, 42])
    sampler = ClassBalancedSampler(labels, 1.0, np.random.default_rng(5))
    spe = desk_train_config().steps_per_epoch(labels.size)
    picks = np.concatenate([labels[sampler.draw(32)] for _ in range(spe * 20)])
    np.testing.assert_allclose(np.bincount(picks) / picks.size, 1 / 3, atol=0.03)


def test_geometry_mismatch_rejected(tiny_data):
    with pytest.raises(ValueError, match="geometry"):
        train(_cfg(), tiny_data, model=JetConfig(channels=3, samples=32, patch_size=8, embed_dim=16, depth=1,
                                                 heads=2, time_freq_dim=8))
