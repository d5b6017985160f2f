"""Dual-encoder interface, embedding geometry and the bundled toy model.

A dual encoder maps images and captions into one joint space of unit
vectors. :class:`ToyDualEncoder` is a two-tower perceptron trained
contrastively on the synthetic shapes corpus; :class:`EmbeddingFileAdapter`
serves precomputed embeddings (for example from a real CLIP model) by id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .storage import load_checkpoint, read_embeddings, save_checkpoint

UNIT_TOL = 1e-6
PERCEPTRON_KEYS = ("W1", "b1", "W2", "b2")
# floor on per-pixel input scale so constant pixels do not blow up
MIN_PIXEL_SCALE = 0.02


@dataclass(eq=False)
class ImageSample:
    pixels: np.ndarray
    id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"image {self.id}: expected H x W x 3 pixels, got {self.pixels.shape}")
        if min(self.pixels.shape[:2]) < 8:
            raise ValueError(f"image {self.id}: sides must be at least 8 pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError(f"image {self.id}: pixel values outside [0, 1]")

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class TextSample:
    tokens: tuple
    raw: str
    id: str

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError(f"text {self.id}: empty token sequence")


@dataclass(eq=False)
class Embedding:
    values: np.ndarray
    space_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("embedding must be a vector")
        norm = np.linalg.norm(self.values)
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValueError(f"embedding norm {norm:.9f} is not 1")

    @property
    def dim(self):
        return self.values.size


class Vocabulary:
    """Whitespace tokenizer over a fixed word list; index 0 is ``<unk>``."""

    UNK = "<unk>"

    def __init__(self, words):
        words = [w for w in words if w != self.UNK]
        if len(set(words)) != len(words):
            raise ValueError("duplicate vocabulary words")
        self.words = [self.UNK] + list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, raw):
        return tuple(self.index.get(w, 0) for w in raw.split())

    def text(self, raw, text_id=None):
        return TextSample(tokens=self.encode(raw), raw=raw, id=text_id or raw.replace(" ", "-"))


def _vec(u):
    return u.values if isinstance(u, Embedding) else np.asarray(u, dtype=np.float64)


def _pair(u, v):
    a, b = _vec(u), _vec(v)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def cosine_distance(u, v):
    """``1 - <u, v>`` for unit vectors, in [0, 2]."""
    a, b = _pair(u, v)
    return float(1.0 - np.dot(a, b))


def euclidean_distance(u, v):
    a, b = _pair(u, v)
    return float(np.linalg.norm(a - b))


def similarity_score(u, v):
    """Cosine similarity on the 0-100 scale used in the report tables."""
    a, b = _pair(u, v)
    return float(100.0 * np.dot(a, b))


class DualEncoder:
    """Base class: subclasses implement :meth:`encode_images` and :meth:`encode_texts`.

    Both return ``(n, embed_dim)`` arrays of unit rows. Encoders with an
    analytic input gradient additionally provide ``image_distance_grad``.
    """

    model_id: str
    embed_dim: int

    def encode_images(self, images):
        raise NotImplementedError

    def encode_texts(self, texts):
        raise NotImplementedError

    def encode_image(self, image):
        return Embedding(self.encode_images([image])[0], self.model_id)

    def encode_text(self, text):
        return Embedding(self.encode_texts([text])[0], self.model_id)


@dataclass
class EncoderTrainingConfig:
    seed: int = 7
    epochs: int = 200
    learning_rate: float = 1e-3
    temperature: float = 0.05
    batch_size: int = 16
    holdout_fraction: float = 0.2
    weight_decay: float = 0.0
    standardize: bool = True
    embed_dim: int = 32
    image_hidden: int = 64
    token_dim: int = 16
    text_hidden: int = 32


class ToyDualEncoder(DualEncoder):
    """Two-tower perceptron.

    Image tower: flatten -> affine -> tanh -> affine -> normalize.
    Text tower: mean token embedding -> affine -> tanh -> affine -> normalize.
    """

    def __init__(self, params, image_shape, vocabulary, model_id, seed, metadata=None):
        self.params = params
        self.image_shape = tuple(image_shape)
        self.vocabulary = vocabulary
        self.model_id = model_id
        self.seed = seed
        self.embed_dim = params["img.W2"].shape[1]
        self.metadata = dict(metadata or {})

    @classmethod
    def initialize(cls, image_shape, vocabulary, config, model_id=None):
        rng = np.random.default_rng(config.seed)
        n_pixels = int(np.prod(image_shape))
        params = {"img.mean": np.full(n_pixels, 0.5), "img.scale": np.ones(n_pixels)}
        for k, v in nn.init_perceptron(rng, n_pixels, config.image_hidden, config.embed_dim).items():
            params["img." + k] = v
        params["tok"] = rng.normal(0.0, 1.0, size=(len(vocabulary), config.token_dim))
        for k, v in nn.init_perceptron(rng, config.token_dim, config.text_hidden, config.embed_dim).items():
            params["txt." + k] = v
        return cls(params, image_shape, vocabulary, model_id or f"toy-seed{config.seed}", config.seed)

    def _tower(self, prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix) and k[n:] in PERCEPTRON_KEYS}

    def _image_matrix(self, images):
        rows = []
        for img in images:
            if img.shape != self.image_shape:
                raise ValueError(f"image {img.id}: shape {img.shape} != encoder input {self.image_shape}")
            rows.append(img.pixels.reshape(-1))
        return (np.stack(rows) - self.params["img.mean"]) / self.params["img.scale"]

    def _token_matrix(self, texts):
        counts = np.zeros((len(texts), len(self.vocabulary)))
        for i, t in enumerate(texts):
            if max(t.tokens) >= len(self.vocabulary) or min(t.tokens) < 0:
                raise ValueError(f"text {t.id}: token index outside vocabulary")
            for tok in t.tokens:
                counts[i, tok] += 1.0 / len(t.tokens)
        return counts

    def _forward_images(self, x):
        raw, cache = nn.perceptron_forward(self._tower("img."), x)
        unit, norms = nn.normalize_rows(raw)
        return unit, (cache, unit, norms)

    def _forward_texts(self, counts):
        pooled = counts @ self.params["tok"]
        raw, cache = nn.perceptron_forward(self._tower("txt."), pooled)
        unit, norms = nn.normalize_rows(raw)
        return unit, (counts, cache, unit, norms)

    def encode_images(self, images):
        return self._forward_images(self._image_matrix(images))[0]

    def encode_texts(self, texts):
        return self._forward_texts(self._token_matrix(texts))[0]

    def image_distance_grad(self, pixels, text_vec):
        """Cosine distance between ``E_v(pixels)`` and ``text_vec`` and its gradient in pixel space."""
        x = (np.asarray(pixels, dtype=np.float64).reshape(1, -1) - self.params["img.mean"]) / self.params["img.scale"]
        unit, (cache, unit, norms) = self._forward_images(x)
        dist = 1.0 - float(unit[0] @ text_vec)
        g_unit = -np.asarray(text_vec)[None, :]
        g_raw = nn.normalize_rows_backward(unit, norms, g_unit)
        _, g_x = nn.perceptron_backward(self._tower("img."), cache, g_raw)
        return dist, (g_x / self.params["img.scale"]).reshape(self.image_shape)

    def _loss_and_grads(self, x, labels, class_counts, temperature):
        """Softmax cross-entropy of each image against every caption class."""
        img, img_cache = self._forward_images(x)
        txt, txt_cache = self._forward_texts(class_counts)
        logits = img @ txt.T / temperature
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        n = x.shape[0]
        loss = -np.mean(np.log(probs[np.arange(n), labels]))
        g_logits = probs
        g_logits[np.arange(n), labels] -= 1.0
        g_logits /= n * temperature
        g_img = g_logits @ txt
        g_txt = g_logits.T @ img

        grads = {}
        cache, unit, norms = img_cache
        g, _ = nn.perceptron_backward(self._tower("img."), cache, nn.normalize_rows_backward(unit, norms, g_img))
        grads.update({"img." + k: v for k, v in g.items()})
        counts, cache, unit, norms = txt_cache
        g, g_pooled = nn.perceptron_backward(self._tower("txt."), cache, nn.normalize_rows_backward(unit, norms, g_txt))
        grads.update({"txt." + k: v for k, v in g.items()})
        grads["tok"] = counts.T @ g_pooled
        return loss, grads

    def to_arrays(self):
        return dict(sorted(self.params.items()))

    def save(self, path):
        meta = {
            "kind": "toy-dual-encoder",
            "model_id": self.model_id,
            "seed": self.seed,
            "image_shape": list(self.image_shape),
            "vocabulary": self.vocabulary.words,
            "metadata": self.metadata,
        }
        save_checkpoint(path, self.to_arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "toy-dual-encoder":
            raise ValueError(f"{path}: not a toy dual-encoder checkpoint")
        return cls(arrays, meta["image_shape"], Vocabulary(meta["vocabulary"]), meta["model_id"], meta["seed"], meta["metadata"])


def caption_classes(corpus):
    """Distinct captions of a corpus, in first-seen order."""
    seen = {}
    for _, text in corpus:
        seen.setdefault(text.id, text)
    return list(seen.values())


def split_corpus(corpus, holdout_fraction, seed):
    order = np.random.default_rng([seed, 1]).permutation(len(corpus))
    n_hold = int(round(len(corpus) * holdout_fraction))
    hold = sorted(order[:n_hold])
    train = sorted(order[n_hold:])
    return [corpus[i] for i in train], [corpus[i] for i in hold]


def train_toy_encoder(corpus, config=None, vocabulary=None, model_id=None):
    """Contrastively train a :class:`ToyDualEncoder` on ``(image, caption)`` pairs.

    Each image is scored against every distinct caption with a temperature
    softmax; both towers receive gradients. A held-out split (by seed) is
    kept out of training and its top-1 retrieval accuracy is stored in
    ``encoder.metadata['holdout_top1']``.
    """
    config = config or EncoderTrainingConfig()
    if len(corpus) < 2:
        raise ValueError("corpus too small to train an encoder")
    classes = caption_classes(corpus)
    if len(classes) < 2:
        raise ValueError("contrastive training needs at least two caption classes")
    if vocabulary is None:
        words = sorted({w for t in classes for w in t.raw.split()})
        vocabulary = Vocabulary(words)
    image_shape = corpus[0][0].shape
    model = ToyDualEncoder.initialize(image_shape, vocabulary, config, model_id)

    train, held = split_corpus(corpus, config.holdout_fraction, config.seed)
    if not train:
        raise ValueError("holdout fraction leaves no training pairs")
    if config.standardize:
        raw = np.stack([img.pixels.reshape(-1) for img, _ in train])
        model.params["img.mean"] = raw.mean(axis=0)
        model.params["img.scale"] = np.maximum(raw.std(axis=0), MIN_PIXEL_SCALE)
    class_index = {t.id: i for i, t in enumerate(classes)}
    x_all = model._image_matrix([img for img, _ in train])
    y_all = np.array([class_index[t.id] for _, t in train])
    class_counts = model._token_matrix(classes)

    trainable = {k: v for k, v in model.params.items() if k not in ("img.mean", "img.scale")}
    opt = nn.Adam(trainable, lr=config.learning_rate)
    rng = np.random.default_rng([config.seed, 2])
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = model._loss_and_grads(x_all[idx], y_all[idx], class_counts, config.temperature)
            if config.weight_decay:
                for key in ("img.W1", "img.W2", "txt.W1", "txt.W2"):
                    grads[key] = grads[key] + config.weight_decay * model.params[key]
            opt.step(trainable, grads)
            total += loss * idx.size
        history.append(total / len(train))

    model.metadata = {
        "train_loss": [round(h, 8) for h in history[-1:]],
        "train_top1": retrieval_accuracy(model, train, classes) if train else None,
        "holdout_top1": retrieval_accuracy(model, held, classes) if held else None,
        "n_train": len(train),
        "n_holdout": len(held),
        "config": vars(config).copy(),
    }
    return model


def retrieve_top1_index(image_embs, text_embs):
    """Index of the nearest gallery row for each image row; ties go to the lowest index."""
    sims = np.atleast_2d(image_embs) @ np.atleast_2d(text_embs).T
    return np.argmax(sims, axis=1)


def retrieve_top1(model, image, gallery):
    """Id of the gallery caption closest (cosine) to ``image`` under ``model``."""
    if not gallery:
        raise ValueError("empty gallery")
    idx = retrieve_top1_index(model.encode_images([image]), model.encode_texts(gallery))[0]
    return gallery[idx].id


def retrieval_accuracy(model, pairs, gallery):
    if not pairs:
        raise ValueError("no pairs to evaluate")
    idx = retrieve_top1_index(model.encode_images([img for img, _ in pairs]), model.encode_texts(gallery))
    hits = sum(gallery[i].id == t.id for i, (_, t) in zip(idx, pairs))
    return hits / len(pairs)


class EmbeddingFileAdapter(DualEncoder):
    """Serves precomputed embeddings looked up by sample id.

    Rows are re-normalized on load so the unit-norm contract holds for files
    written by other tools. Unknown ids raise ``KeyError``.
    """

    def __init__(self, table, model_id):
        if not table:
            raise ValueError("empty embedding table")
        dims = {v.size for v in table.values()}
        if len(dims) != 1:
            raise ValueError("embeddings have inconsistent dimensions")
        self.table = {k: np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for k, v in table.items()}
        self.embed_dim = dims.pop()
        self.model_id = model_id

    @classmethod
    def from_file(cls, path, model_id=None):
        return cls(read_embeddings(path), model_id or str(path))

    def _lookup(self, sample_id):
        try:
            return self.table[sample_id]
        except KeyError:
            raise KeyError(f"no embedding for id {sample_id!r} in {self.model_id}") from None

    def encode_images(self, images):
        return np.stack([self._lookup(img.id) for img in images])

    def encode_texts(self, texts):
        return np.stack([self._lookup(t.id) for t in texts])


def load_encoder(path):
    """Load an encoder checkpoint or, for ``.tsv``/``.emb`` files, an embedding table."""
    path = str(path)
    if path.endswith((".tsv", ".emb", ".txt")):
        return EmbeddingFileAdapter.from_file(path)
    return ToyDualEncoder.load(path)
