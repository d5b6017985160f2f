import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trigmark.encoder import Embedding
from trigmark.transform import (
    TransformModule,
    TransformTrainingConfig,
    TransformTrainingSet,
    alignment_rate,
    apply_transform,
    build_training_set,
    fit_transform,
    gradient_check,
    train_transform,
    transform_loss,
    transform_loss_and_grads,
)


def unit_rows(r, n, d):
    v = r.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_instance(seed, n=4, d=5, hidden=6):
    r = np.random.default_rng(seed)
    module = TransformModule.initialize(d, "space", TransformTrainingConfig(seed=seed, hidden_dim=hidden))
    for key in module.params:
        module.params[key] = r.normal(0, 0.5, module.params[key].shape)
    batch = TransformTrainingSet(unit_rows(r, n, d), unit_rows(r, n, d), unit_rows(r, n, d), "space")
    return module, batch


def identity_module(d):
    module = TransformModule.initialize(d, "space", TransformTrainingConfig())
    for head in ("f", "g"):
        module.params[f"{head}.W2"][:] = 0.0
        module.params[f"{head}.b2"][:] = 0.0
    return module


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    module, batch = random_instance(seed)
    for eta in (0.37, 1.1):
        assert gradient_check(module, batch, lam=1.0, eta=eta) <= 1e-4


def test_gradient_check_refuses_kink():
    module, batch = random_instance(0)
    fx = module.transform_images(batch.x[:1])
    gy = module.transform_texts(batch.y[:1])
    eta = 1.0 - float(fx[0] @ gy[0])
    with pytest.raises(ValueError, match="kink"):
        gradient_check(module, batch, 1.0, eta)


def test_hand_evaluated_loss():
    y = np.array([[1.0, 0.0]])
    x_adv = np.array([[0.2, math.sqrt(1 - 0.04)]])
    x = np.array([[0.5, math.sqrt(1 - 0.25)]])
    batch = TransformTrainingSet(x, y, x_adv, "space")
    module = identity_module(2)
    assert transform_loss(module, batch, lam=1.0, eta=0.3) == pytest.approx(1.0)
    assert transform_loss(module, batch, lam=0.0, eta=0.3) == pytest.approx(0.8)


def test_lambda_zero_kills_preservation_gradient():
    module, batch = random_instance(3)
    _, g1 = transform_loss_and_grads(module, batch, 0.0, 0.1)
    other = TransformTrainingSet(-batch.x, batch.y, batch.x_adv, "space")
    _, g2 = transform_loss_and_grads(module, other, 0.0, 0.1)
    for key in g1:
        assert np.array_equal(g1[key], g2[key])


def test_zero_loss_batch_has_zero_gradient():
    module, _ = random_instance(4)
    for k in ("W1", "b1", "W2", "b2"):
        module.params[f"g.{k}"] = module.params[f"f.{k}"].copy()
    v = unit_rows(np.random.default_rng(9), 3, 5)
    batch = TransformTrainingSet(v, v, v, "space")
    loss, grads = transform_loss_and_grads(module, batch, 1.0, 0.3)
    assert loss == pytest.approx(0.0, abs=1e-12)
    for g in grads.values():
        assert np.max(np.abs(g)) < 1e-12


def test_epochs_zero_not_converged():
    module, batch = random_instance(0)
    fresh = fit_transform(batch, TransformTrainingConfig(epochs=0, hidden_dim=6), "space")
    init = TransformModule.initialize(5, "space", TransformTrainingConfig(epochs=0, hidden_dim=6))
    assert not fresh.converged
    for key in init.params:
        assert np.array_equal(fresh.params[key], init.params[key])


def test_initial_module_near_identity():
    module = TransformModule.initialize(8, "space", TransformTrainingConfig())
    v = unit_rows(np.random.default_rng(2), 10, 8)
    assert np.all(np.sum(module.transform_images(v) * v, axis=1) > 0.99)


def test_apply_transform_space_check(owner_module, small_encoder, small_corpus):
    x = small_corpus[0][0]
    e = Embedding(small_encoder.encode_images([x])[0], small_encoder.model_id)
    out = apply_transform(owner_module, e, "image")
    assert out.space_id == owner_module.space_id
    with pytest.raises(ValueError):
        apply_transform(owner_module, Embedding(e.values, "other-model"), "image")
    with pytest.raises(ValueError):
        apply_transform(owner_module, e, "audio")


def test_training_converges_and_is_deterministic(owner_module, small_encoder, owner_set):
    assert owner_module.converged
    batch = build_training_set(small_encoder, owner_set)
    assert alignment_rate(owner_module, batch, 0.25) >= 0.9
    again = train_transform(small_encoder, owner_set, TransformTrainingConfig(eta=0.05, freeze_g=True))
    for key in owner_module.params:
        assert np.array_equal(owner_module.params[key], again.params[key])
    assert owner_module.loss_history[-1] < owner_module.loss_history[0]


def test_library_defaults_converge(small_encoder, owner_set):
    module = train_transform(small_encoder, owner_set)
    assert module.converged


def test_errors(small_encoder, owner_set):
    from dataclasses import replace

    with pytest.raises(ValueError):
        build_training_set(small_encoder, replace(owner_set, model_id="other"))
    with pytest.raises(ValueError):
        TransformTrainingConfig(eta=3.0).validate()
    module, batch = random_instance(0)
    wrong = TransformTrainingSet(np.ones((1, 3)), np.ones((1, 3)), np.ones((1, 3)), "space")
    with pytest.raises(ValueError):
        transform_loss(module, wrong, 1.0, 0.3)


def test_checkpoint_round_trip(tmp_path, owner_module):
    owner_module.save(tmp_path / "m.ckpt")
    back = TransformModule.load(tmp_path / "m.ckpt")
    assert back.module_id == owner_module.module_id and back.converged == owner_module.converged
    v = unit_rows(np.random.default_rng(1), 3, owner_module.dim)
    assert np.array_equal(back.transform_images(v), owner_module.transform_images(v))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0), st.floats(0.0, 2.0))
def test_loss_bounds(seed, lam, eta):
    module, batch = random_instance(seed)
    loss = transform_loss(module, batch, lam, eta)
    n = len(batch)
    assert -1e-12 <= loss <= 2 * n + lam * 2 * n + 1e-9
    assert transform_loss(module, batch, 0.0, eta) <= loss + 1e-12
