"""Embedding-space transform module trained on trigger tuples.

The module has two residual heads over the encoder's joint space: ``f`` for
image embeddings and ``g`` for caption embeddings. Each head computes
``normalize(e + W2 tanh(W1 e + b1) + b2)`` with a small ``W2`` at
initialization, so an untrained module is close to the identity.

Training minimizes, over tuples ``(x, y, x_adv)`` embedded by the owner model::

    L = sum_i d(f(x_adv_i), g(y_i)) + lam * max(0, d(f(x_i), g(y_i)) - eta)

where ``d`` is cosine distance. The first term pulls each trigger back onto
its caption; the hinge keeps clean pairs within ``eta`` of their captions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .encoder import Embedding
from .storage import load_checkpoint, save_checkpoint

HEADS = ("f", "g")
INIT_SCALE = 1e-2
KINK_TOL = 1e-6


@dataclass
class TransformTrainingConfig:
    """Hyperparameters for :func:`train_transform`.

    ``hidden_dim=None`` means twice the embedding dimension. ``freeze_g``
    keeps the caption head at its initial near-identity parameters.
    """

    lam: float = 1.0
    eta: float = 0.3
    epsilon2: float = 0.25
    learning_rate: float = 1e-3
    epochs: int = 1000
    seed: int = 7
    hidden_dim: int | None = None
    freeze_g: bool = False

    def validate(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 <= self.eta <= 2.0:
            raise ValueError("eta must lie in [0, 2]")
        if self.epsilon2 <= 0:
            raise ValueError("epsilon2 must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")


@dataclass(eq=False)
class TransformTrainingSet:
    """Row-aligned owner-space embeddings of clean images, captions and triggers."""

    x: np.ndarray
    y: np.ndarray
    x_adv: np.ndarray
    space_id: str
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.x, self.y, self.x_adv = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (self.x, self.y, self.x_adv))
        if not (self.x.shape == self.y.shape == self.x_adv.shape):
            raise ValueError("training tuples must have matching shapes")
        if self.x.shape[0] == 0:
            raise ValueError("empty training set")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]


def build_training_set(model, triggers):
    """Embed the accepted triggers of ``triggers`` with ``model``."""
    if triggers.model_id != model.model_id:
        raise ValueError(f"triggers target {triggers.model_id!r}, not {model.model_id!r}")
    recs = triggers.accepted
    if not recs:
        raise ValueError("trigger set has no accepted triggers")
    return TransformTrainingSet(
        x=model.encode_images([r.basic_image for r in recs]),
        y=model.encode_texts([r.text for r in recs]),
        x_adv=model.encode_images([r.adversarial_image for r in recs]),
        space_id=model.model_id,
        ids=[r.trigger_id for r in recs],
    )


class TransformModule:
    def __init__(self, params, dim, hidden_dim, source_model_id, config, converged=False, module_id=None, metadata=None):
        self.params = params
        self.dim = int(dim)
        self.hidden_dim = int(hidden_dim)
        self.source_model_id = source_model_id
        self.config = config
        self.converged = bool(converged)
        self.module_id = module_id or f"transform-{source_model_id}-seed{config.seed}"
        self.metadata = dict(metadata or {})

    @property
    def space_id(self):
        """Id of the output space; distinct from the source model's space."""
        return f"{self.module_id}:out"

    @classmethod
    def initialize(cls, dim, source_model_id, config, module_id=None):
        config.validate()
        hidden = config.hidden_dim or 2 * dim
        rng = np.random.default_rng([config.seed, 3])
        params = {}
        for head in HEADS:
            p = nn.init_perceptron(rng, dim, hidden, dim, out_scale=INIT_SCALE)
            params.update({f"{head}.{k}": v for k, v in p.items()})
        return cls(params, dim, hidden, source_model_id, config, module_id=module_id)

    def _head(self, head):
        return {k: self.params[f"{head}.{k}"] for k in ("W1", "b1", "W2", "b2")}

    def _forward(self, head, e):
        e = np.atleast_2d(np.asarray(e, dtype=np.float64))
        if e.shape[1] != self.dim:
            raise ValueError(f"embedding dimension {e.shape[1]} != module dimension {self.dim}")
        p = self._head(head)
        delta, cache = nn.perceptron_forward(p, e)
        out, norms = nn.normalize_rows(e + delta)
        return out, (p, cache, out, norms)

    def _backward(self, head, state, grad_out):
        p, cache, out, norms = state
        grad_pre = nn.normalize_rows_backward(out, norms, grad_out)
        grads, _ = nn.perceptron_backward(p, cache, grad_pre)
        return {f"{head}.{k}": v for k, v in grads.items()}

    def transform_images(self, e):
        return self._forward("f", e)[0]

    def transform_texts(self, e):
        return self._forward("g", e)[0]

    def save(self, path):
        meta = {
            "kind": "transform-module",
            "dim": self.dim,
            "hidden_dim": self.hidden_dim,
            "source_model_id": self.source_model_id,
            "module_id": self.module_id,
            "converged": self.converged,
            "config": asdict(self.config),
            "metadata": self.metadata,
        }
        save_checkpoint(path, {k: self.params[k] for k in sorted(self.params)}, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "transform-module":
            raise ValueError(f"{path}: not a transform module checkpoint")
        config = TransformTrainingConfig(**meta["config"])
        return cls(arrays, meta["dim"], meta["hidden_dim"], meta["source_model_id"], config,
                   meta["converged"], meta["module_id"], meta.get("metadata"))


def apply_transform(module, e, modality):
    """Route an :class:`Embedding` through ``f`` (image) or ``g`` (text)."""
    if e.space_id != module.source_model_id:
        raise ValueError(f"embedding lives in {e.space_id!r}; module expects {module.source_model_id!r}")
    if modality == "image":
        out = module.transform_images(e.values)
    elif modality == "text":
        out = module.transform_texts(e.values)
    else:
        raise ValueError(f"modality must be 'image' or 'text', got {modality!r}")
    return Embedding(out[0], module.space_id)


def _loss_terms(module, batch, lam, eta):
    if batch.dim != module.dim:
        raise ValueError(f"batch dimension {batch.dim} != module dimension {module.dim}")
    n = len(batch)
    # one pass through f for clean and trigger images together
    fx_all, f_state = module._forward("f", np.vstack([batch.x_adv, batch.x]))
    gy, g_state = module._forward("g", batch.y)
    f_adv, f_clean = fx_all[:n], fx_all[n:]
    d_adv = 1.0 - np.sum(f_adv * gy, axis=1)
    d_clean = 1.0 - np.sum(f_clean * gy, axis=1)
    hinge = d_clean - eta
    return f_adv, f_clean, gy, d_adv, hinge, f_state, g_state


def transform_loss(module, batch, lam, eta):
    """Sum of alignment distances plus ``lam`` times the clean-pair hinge."""
    _, _, _, d_adv, hinge, _, _ = _loss_terms(module, batch, lam, eta)
    return float(d_adv.sum() + lam * np.maximum(hinge, 0.0).sum())


def transform_loss_and_grads(module, batch, lam, eta):
    f_adv, f_clean, gy, d_adv, hinge, f_state, g_state = _loss_terms(module, batch, lam, eta)
    active = (hinge > 0.0).astype(np.float64)[:, None]
    loss = float(d_adv.sum() + lam * np.maximum(hinge, 0.0).sum())
    grad_f = np.vstack([-gy, -lam * active * gy])
    grad_g = -f_adv - lam * active * f_clean
    grads = module._backward("f", f_state, grad_f)
    grads.update(module._backward("g", g_state, grad_g))
    return loss, grads


def gradient_check(module, batch, lam, eta, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Raises ``ValueError`` if some clean pair sits within ``KINK_TOL`` of the
    hinge kink, where the loss is not differentiable.
    """
    _, _, _, _, hinge, _, _ = _loss_terms(module, batch, lam, eta)
    if lam > 0 and np.any(np.abs(hinge) < KINK_TOL):
        raise ValueError("a clean pair sits at the hinge kink; perturb eta")
    _, grads = transform_loss_and_grads(module, batch, lam, eta)
    worst = 0.0
    for key, value in module.params.items():
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = transform_loss(module, batch, lam, eta)
            flat[i] = old - h
            down = transform_loss(module, batch, lam, eta)
            flat[i] = old
            num_flat[i] = (up - down) / (2 * h)
        denom = np.maximum(np.abs(grads[key]) + np.abs(numeric), 1e-8)
        worst = max(worst, float(np.max(np.abs(grads[key] - numeric) / denom)))
    return worst


def alignment_rate(module, batch, epsilon2):
    """Fraction of tuples with ``||f(x_adv) - g(y)||_2 <= epsilon2``."""
    gap = np.linalg.norm(module.transform_images(batch.x_adv) - module.transform_texts(batch.y), axis=1)
    return float(np.mean(gap <= epsilon2))


def fit_transform(batch, config, source_model_id=None, module_id=None):
    """Train a module on a prepared :class:`TransformTrainingSet`.

    Returns the module; ``module.metadata["loss_history"]`` holds the loss
    after every epoch (full batch, so one Adam step per epoch).
    """
    config.validate()
    module = TransformModule.initialize(batch.dim, source_model_id or batch.space_id, config, module_id)
    trainable = {k: v for k, v in module.params.items() if not (config.freeze_g and k.startswith("g."))}
    opt = nn.Adam(trainable, lr=config.learning_rate)
    history = [transform_loss(module, batch, config.lam, config.eta)]
    for _ in range(config.epochs):
        _, grads = transform_loss_and_grads(module, batch, config.lam, config.eta)
        opt.step(trainable, {k: grads[k] for k in trainable})
        history.append(transform_loss(module, batch, config.lam, config.eta))
    rate = alignment_rate(module, batch, config.epsilon2)
    module.converged = config.epochs > 0 and rate >= 0.9
    module.metadata.update({
        "alignment_rate": rate,
        "initial_loss": history[0],
        "final_loss": history[-1],
        "n_tuples": len(batch),
    })
    module.loss_history = history
    return module


def train_transform(model, triggers, config=None, module_id=None):
    """Train a transform module for ``model`` on its accepted triggers."""
    config = config or TransformTrainingConfig()
    return fit_transform(build_training_set(model, triggers), config, model.model_id, module_id)
