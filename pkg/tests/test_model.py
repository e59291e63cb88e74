import numpy as np
import pytest

from jetgen.model import (FULL_SCALE, JetConfig, as_leaves, block_modulation, count_params, embed, forward,
                          init_params, param_shapes, predict, transformer_block)
from jetgen.flow import interpolate, reconstruct_x1
from jetgen.objectives import LossWeights, total_loss
from jetgen.tensorgrad import Tape, Tensor, backward, grad_check_errors

TINY = JetConfig(channels=2, samples=16, patch_size=4, embed_dim=16, depth=2, heads=2, num_classes=3,
                 time_freq_dim=8)


def _params(cfg=TINY, seed=0, zero_init=False):
    return init_params(cfg, np.random.default_rng(seed), zero_init=zero_init)


def test_config_validation_messages():
    with pytest.raises(ValueError, match="divisible by heads"):
        JetConfig(embed_dim=10, heads=4)
    with pytest.raises(ValueError, match="T=400.*P=30"):
        JetConfig(patch_size=30)
    with pytest.raises(ValueError, match="label_drop"):
        JetConfig(label_drop=1.0)


def test_census_formula_matches_enumeration():
    for cfg in (TINY, JetConfig(), JetConfig(gated=False), FULL_SCALE):
        assert count_params(cfg) == sum(int(np.prod(s)) for _, s in param_shapes(cfg))
    assert count_params(JetConfig()) == sum(p.size for p in _params(JetConfig()).values())


def test_census_is_linear_in_depth():
    a, b = JetConfig(depth=2), JetConfig(depth=4)
    c = JetConfig(depth=8)
    assert count_params(c) - count_params(b) == 2 * (count_params(b) - count_params(a))


def test_full_scale_census_near_reported_size():
    assert abs(count_params(FULL_SCALE) / 129.9e6 - 1) < 0.05


def test_class_table_has_null_row():
    assert _params()["class_table"].shape == (TINY.num_classes + 1, TINY.embed_dim)


def test_embed_shapes_and_zero_case():
    cfg = JetConfig()
    p = _params(cfg)
    assert embed(np.zeros((1, 4, 400)), p, cfg).shape == (1, 32, 64)
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    assert not embed(np.random.default_rng(0).normal(size=(2, 4, 400)), zero, cfg).data.any()
    with pytest.raises(ValueError, match="geometry"):
        embed(np.zeros((1, 3, 400)), p, cfg)


def test_embed_keeps_channel_identity():
    p = _params()
    p["pos_embed"] = np.zeros_like(p["pos_embed"])
    x = np.random.default_rng(1).normal(size=(1, 2, 16))
    h = embed(x, p, TINY).data[0]
    hs = embed(x[:, ::-1], p, TINY).data[0]
    n = TINY.num_patches
    np.testing.assert_allclose(hs[:n], h[n:])
    np.testing.assert_allclose(hs[n:], h[:n])


def test_zero_init_field_is_zero():
    p = _params(zero_init=True)
    x = np.random.default_rng(2).normal(size=(3, 2, 16))
    v = predict(x, [0.1, 0.5, 0.9], [0, 1, 3], p, TINY)
    assert v.shape == x.shape and not v.any()


def test_forward_is_deterministic():
    p = _params()
    x = np.random.default_rng(3).normal(size=(2, 2, 16))
    a = predict(x, [0.2, 0.7], [0, 2], p, TINY)
    b = predict(x, [0.2, 0.7], [0, 2], p, TINY)
    assert a.tobytes() == b.tobytes()


def test_channel_permutation_coherence():
    p = _params(seed=4)
    x = np.random.default_rng(4).normal(size=(1, 2, 16))
    n = TINY.num_patches
    swapped = dict(p)
    pos = p["pos_embed"]
    swapped["pos_embed"] = np.concatenate([pos[n:], pos[:n]])
    v = predict(x, 0.4, 1, p, TINY)
    vs = predict(x[:, ::-1], 0.4, 1, swapped, TINY)
    np.testing.assert_allclose(vs[:, ::-1], v, atol=1e-12)


def test_gate_zero_makes_block_identity():
    p = _params()
    h = Tensor(np.random.default_rng(5).normal(size=(1, TINY.num_tokens, 16)))
    zero = Tensor(np.zeros((1, 1, 16)))
    out = transformer_block(h, (zero, zero, zero, zero, zero, zero), p, TINY, 0)
    np.testing.assert_array_equal(out.data, h.data)


def test_zero_modulation_gives_plain_layer_norm_and_ungated_gate_is_one():
    cfg = JetConfig(**{**TINY.to_dict(), "gated": False})
    p = _params(cfg, zero_init=True)
    mods = block_modulation(Tensor(np.ones((1, 16))), p, cfg, 0)
    assert not mods[0].data.any() and not mods[1].data.any()
    np.testing.assert_array_equal(mods[2].data, 1.0)


def test_null_token_and_class_range():
    p = _params()
    x = np.zeros((1, 2, 16))
    predict(x, 0.5, TINY.num_classes, p, TINY)
    with pytest.raises(ValueError, match="class label"):
        predict(x, 0.5, TINY.num_classes + 1, p, TINY)


def test_non_finite_activation_names_block():
    p = _params()
    p["blocks.1.mlp.fc2.bias"] = np.full_like(p["blocks.1.mlp.fc2.bias"], np.inf)
    with pytest.raises(FloatingPointError, match="block 1"):
        predict(np.zeros((1, 2, 16)), 0.5, 0, p, TINY)


def test_dropped_labels_get_no_class_row_gradient():
    p = _params()
    x = np.random.default_rng(6).normal(size=(2, 2, 16))
    with Tape():
        leaves = as_leaves(p)
        v = forward(x, [0.3, 0.6], [TINY.null_class] * 2, leaves, TINY)
        g = backward(v.mean(), leaves)
    assert not g["class_table"][:TINY.num_classes].any()
    assert g["class_table"][TINY.null_class].any()


def model_grad_check(seed=0):
    """Per-coordinate relative errors of d L_total / d theta against central differences.

    D=16, two blocks, 64-bit, random (non-zero-init) parameters.
    """
    rng = np.random.default_rng(seed)
    p = _params(seed=seed)
    x1 = rng.normal(size=(2, 2, 16))
    t = np.array([0.3, 0.8])
    x_t = interpolate(rng.normal(size=x1.shape), x1, t)
    c = np.array([1, TINY.null_class])
    weights = LossWeights(1.0, 0.1, 0.1)

    def loss(q):
        x1_hat = reconstruct_x1(Tensor(x_t), forward(x_t, t, c, q, TINY), t)
        return total_loss(x1, x1_hat, weights, smooth=False).total

    errs = grad_check_errors(loss, p, 1e-5)
    return np.concatenate([e.ravel() for e in errs.values()])


def test_full_model_gradient():
    errs = model_grad_check()
    assert np.mean(errs < 1e-4) >= 0.999
