"""Pipeline configuration: a JSON document with a fixed schema.

Top-level sections and their keys::

    corpus     image_size, samples_per_class, seed*, jitter, name
    encoder    seed*, epochs, learning_rate, temperature, batch_size,
               holdout_fraction, weight_decay, standardize, embed_dim,
               image_hidden, token_dim, text_hidden
    triggers   k, pool, sampling_seed*, require_flip, collision_cos,
               noise {noise_type, strategy, intensity, seed*},
               patch {shape, position, size_fraction, seed*},
               budget {epsilon1, delta, delta_margin, max_steps, step_size}
    transform  lam, eta, epsilon2, learning_rate, epochs, seed*, hidden_dim, freeze_g
    verify     mode, aggregate_threshold, calibration_pairs, calibration_seed*
    stealth    intensities, seed*
    attack     trials, seed*, forger
    sweep      ks, seeds*

Keys marked ``*`` are required; every other key falls back to the default
in :func:`default_config`. Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .corpus import SyntheticCorpusSpec
from .encoder import EncoderTrainingConfig
from .transform import TransformTrainingConfig
from .triggers import AdversarialBudget, NoiseSpec, PatchSpec, TriggerSettings
from .verify import MODES


class ConfigError(ValueError):
    """Schema violation; the message names the offending field."""


def default_config():
    return {
        "corpus": {"image_size": [32, 32], "samples_per_class": 30, "seed": 7, "jitter": 1, "name": "shapes"},
        "encoder": {
            "seed": 7, "epochs": 200, "learning_rate": 1e-3, "temperature": 0.05, "batch_size": 16,
            "holdout_fraction": 0.2, "weight_decay": 0.0, "standardize": True, "embed_dim": 32,
            "image_hidden": 64, "token_dim": 16, "text_hidden": 32,
        },
        "triggers": {
            "k": 16, "pool": 64, "sampling_seed": 7, "require_flip": True, "collision_cos": 0.99,
            "noise": {"noise_type": "adversarial", "strategy": "optimized", "intensity": 1.0, "seed": 7},
            "patch": {"shape": "rectangle", "position": [0, 0], "size_fraction": 0.25, "seed": 7},
            "budget": {"epsilon1": 2.0, "delta": None, "delta_margin": 0.15, "max_steps": 300, "step_size": 0.02},
        },
        # eta and freeze_g are calibrated for the toy encoder's geometry
        "transform": {
            "lam": 1.0, "eta": 0.05, "epsilon2": 0.25, "learning_rate": 1e-3, "epochs": 1000,
            "seed": 7, "hidden_dim": None, "freeze_g": True,
        },
        "verify": {"mode": "behavioral", "aggregate_threshold": 0.5, "calibration_pairs": 108, "calibration_seed": 7},
        "stealth": {"intensities": [0.1, 0.2, 0.3], "seed": 7},
        "attack": {"trials": 3, "seed": 7, "forger": "surrogate"},
        "sweep": {"ks": [16, 64, 128], "seeds": [7, 11, 13]},
    }


# (section, subsection or None, key) of every seed; all are required
SEED_FIELDS = (
    ("corpus", None, "seed"),
    ("encoder", None, "seed"),
    ("triggers", None, "sampling_seed"),
    ("triggers", "noise", "seed"),
    ("triggers", "patch", "seed"),
    ("transform", None, "seed"),
    ("verify", None, "calibration_seed"),
    ("stealth", None, "seed"),
    ("attack", None, "seed"),
    ("sweep", None, "seeds"),
)
NESTED = {"triggers": ("noise", "patch", "budget")}


def _merge(section, given, defaults, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key in NESTED.get(section, ()):
            out[key] = _merge(None, value, defaults[key], f"{path}.{key}")
        else:
            out[key] = value
    return out


def validate_config(raw):
    """Merge ``raw`` over the defaults and check the schema; returns a new dict."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    base = default_config()
    unknown = sorted(set(raw) - set(base))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    for section, sub, key in SEED_FIELDS:
        node = raw.get(section, {})
        if sub is not None:
            node = node.get(sub, {}) if isinstance(node, dict) else {}
        if not isinstance(node, dict) or key not in node:
            name = ".".join(p for p in (section, sub, key) if p)
            raise ConfigError(f"{name}: required seed is missing")
    cfg = {s: _merge(s, raw.get(s, {}), base[s], s) for s in base}
    try:
        build(cfg)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def override_seed(cfg, seed):
    """Set every seed in ``cfg`` to ``seed`` (sweep seeds become ``[seed]``)."""
    cfg = copy.deepcopy(cfg)
    for section, sub, key in SEED_FIELDS:
        node = cfg[section] if sub is None else cfg[section][sub]
        node[key] = [seed] if key == "seeds" else seed
    return cfg


def load_config(path=None, seed=None):
    if path is None:
        raw = default_config()
    else:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = validate_config(raw)
    return override_seed(cfg, seed) if seed is not None else cfg


def dump_config(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _typed(cls, values, path):
    names = {f.name for f in fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown field")
    for f in fields(cls):
        if f.name not in values:
            continue
        value = values[f.name]
        expected = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if "bool" == expected and not isinstance(value, bool):
            raise ConfigError(f"{path}.{f.name}: expected true/false")
        if expected == "int" and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{path}.{f.name}: expected an integer")
        if expected == "float" and (not isinstance(value, (int, float)) or isinstance(value, bool)):
            raise ConfigError(f"{path}.{f.name}: expected a number")
    return cls(**values)


@dataclass
class Pipeline:
    """Typed view of a validated config."""

    corpus: SyntheticCorpusSpec
    encoder: EncoderTrainingConfig
    triggers: TriggerSettings
    transform: TransformTrainingConfig
    verify: dict
    stealth: dict
    attack: dict
    sweep: dict

    @property
    def model_id(self):
        return f"toy-seed{self.encoder.seed}"

    @property
    def module_id(self):
        return f"transform-{self.model_id}-seed{self.transform.seed}"


def build(cfg):
    c = dict(cfg["corpus"])
    c["image_size"] = tuple(c["image_size"])
    corpus = _typed(SyntheticCorpusSpec, c, "corpus")
    corpus.validate()
    encoder = _typed(EncoderTrainingConfig, cfg["encoder"], "encoder")
    t = dict(cfg["triggers"])
    patch = dict(t.pop("patch"))
    if patch.get("position") is not None:
        patch["position"] = tuple(patch["position"])
    triggers = TriggerSettings(
        noise=_typed(NoiseSpec, t.pop("noise"), "triggers.noise"),
        patch=_typed(PatchSpec, patch, "triggers.patch"),
        budget=_typed(AdversarialBudget, t.pop("budget"), "triggers.budget"),
        **t,
    )
    transform = _typed(TransformTrainingConfig, cfg["transform"], "transform")
    transform.validate()
    v = cfg["verify"]
    if v["mode"] not in MODES:
        raise ConfigError(f"verify.mode: must be one of {MODES}")
    if not 0.0 < v["aggregate_threshold"] <= 1.0:
        raise ConfigError("verify.aggregate_threshold: must lie in (0, 1]")
    if v["calibration_pairs"] < 10:
        raise ConfigError("verify.calibration_pairs: need at least 10")
    if cfg["attack"]["forger"] not in ("surrogate", "owner"):
        raise ConfigError("attack.forger: must be 'surrogate' or 'owner'")
    if cfg["attack"]["trials"] < 1:
        raise ConfigError("attack.trials: must be >= 1")
    if not cfg["sweep"]["seeds"] or not cfg["sweep"]["ks"]:
        raise ConfigError("sweep: ks and seeds must be non-empty")
    return Pipeline(corpus, encoder, triggers, transform, dict(v), dict(cfg["stealth"]), dict(cfg["attack"]), dict(cfg["sweep"]))
