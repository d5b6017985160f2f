"""Pipeline steps over a persistent artifact directory.

Layout under the artifact root::

    corpora/<name>/           manifest.jsonl, spec.json, images/*.ppm
    encoders/<model_id>.ckpt
    triggers/<model_id>/      manifest.json, images/*
    transforms/<module_id>.ckpt
    reports/                  *.tsv, *.json, figures/*.png

Every step reads only upstream artifacts named by the config, so the CLI
commands compose with no hidden state.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import AttackContext, attack_machine, attack_table, default_scenarios, run_scenario
from .corpus import default_vocabulary, generate_synthetic_corpus, load_corpus, save_corpus
from .encoder import caption_classes, load_encoder, train_toy_encoder
from .stealth import stealth_machine, stealth_matrix, stealth_table
from .transform import TransformModule, build_training_set, train_transform
from .triggers import TriggerSet, generate_owner_triggers, load_trigger_set, save_trigger_set
from .verify import VerificationThresholds, calibrate_thresholds, evaluate_phases, verify_triggers

ENV_HOME = "TRIGMARK_HOME"
# behavioral mode ignores the distance thresholds
RETRIEVAL_ONLY = VerificationThresholds(sigma=1.0, tau=0.5, mode="behavioral")


class MissingArtifact(FileNotFoundError):
    """An upstream artifact is absent; the message names its path."""


def default_root():
    return Path(os.environ.get(ENV_HOME, "artifacts"))


class Layout:
    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_root()

    def corpus_dir(self, name):
        return self.root / "corpora" / name

    def encoder_path(self, model_id):
        return self.root / "encoders" / f"{model_id}.ckpt"

    def triggers_dir(self, model_id):
        return self.root / "triggers" / model_id

    def transform_path(self, module_id):
        return self.root / "transforms" / f"{module_id}.ckpt"

    @property
    def reports(self):
        return self.root / "reports"

    @property
    def figures(self):
        return self.reports / "figures"


def require(path, what):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


# -- owner steps ----------------------------------------------------------

def gen_corpus(p, layout):
    corpus = generate_synthetic_corpus(p.corpus, default_vocabulary())
    save_corpus(corpus, layout.corpus_dir(p.corpus.name), p.corpus)
    return corpus


def read_corpus(p, layout):
    directory = layout.corpus_dir(p.corpus.name)
    require(directory / "manifest.jsonl", "corpus manifest")
    return load_corpus(directory, default_vocabulary())


def train_encoder(p, layout):
    corpus = read_corpus(p, layout)
    model = train_toy_encoder(corpus, p.encoder, default_vocabulary(), model_id=p.model_id)
    model.save(layout.encoder_path(p.model_id))
    return model


def read_encoder(p, layout, path=None):
    path = require(path or layout.encoder_path(p.model_id), "encoder checkpoint")
    return load_encoder(path)


def gen_triggers(p, layout):
    model = read_encoder(p, layout)
    corpus = read_corpus(p, layout)
    tset = generate_owner_triggers(model, corpus, p.triggers, caption_classes(corpus), p.corpus.name)
    save_trigger_set(tset, layout.triggers_dir(model.model_id))
    return tset


def read_triggers(p, layout, model_id=None):
    directory = layout.triggers_dir(model_id or p.model_id)
    require(directory / "manifest.json", "trigger manifest")
    return load_trigger_set(directory)


def train_module(p, layout):
    model = read_encoder(p, layout)
    tset = read_triggers(p, layout, model.model_id)
    module = train_transform(model, tset, p.transform, module_id=p.module_id)
    module.save(layout.transform_path(module.module_id))
    return module


def read_module(p, layout, path=None):
    path = require(path or layout.transform_path(p.module_id), "transform checkpoint")
    return TransformModule.load(path)


def calibration_pairs(p, corpus):
    n = min(p.verify["calibration_pairs"], len(corpus))
    idx = np.random.default_rng(p.verify["calibration_seed"]).choice(len(corpus), size=n, replace=False)
    return [corpus[i] for i in sorted(idx)]


def owner_thresholds(p, O, M, corpus, tset):
    return calibrate_thresholds(O, M, calibration_pairs(p, corpus), tset, p.verify["mode"])


def verify(p, layout, model_path=None, module_path=None):
    """Verify the owner's triggers on a suspicious model through a module.

    Thresholds are always calibrated on the owner's own encoder and module;
    ``model_path``/``module_path`` swap in the suspicious model or a
    different module for the queries.
    """
    O = read_encoder(p, layout)
    M_owner = read_module(p, layout)
    corpus = read_corpus(p, layout)
    tset = read_triggers(p, layout, O.model_id)
    th = owner_thresholds(p, O, M_owner, corpus, tset)
    S = read_encoder(p, layout, model_path) if model_path else O
    M = read_module(p, layout, module_path) if module_path else M_owner
    report = verify_triggers(S, M, tset, caption_classes(corpus), th, p.verify["aggregate_threshold"])
    write_text(layout.reports / "verify.tsv", report.to_table())
    write_text(layout.reports / "verify.json", report.to_machine())
    return report


def stealth_eval(p, layout):
    O = read_encoder(p, layout)
    tset = read_triggers(p, layout, O.model_id)
    rows = stealth_matrix(O, tset, tuple(p.stealth["intensities"]), seed=p.stealth["seed"])
    write_text(layout.reports / "stealth.tsv", stealth_table(rows))
    write_text(layout.reports / "stealth.json", stealth_machine(rows))
    return rows


def attack_context(p, layout):
    O = read_encoder(p, layout)
    M = read_module(p, layout)
    corpus = read_corpus(p, layout)
    tset = read_triggers(p, layout, O.model_id)
    th = owner_thresholds(p, O, M, corpus, tset)
    return AttackContext(O, M, tset, corpus, caption_classes(corpus), th, p.triggers, p.encoder, p.transform,
                         default_vocabulary(), p.verify["aggregate_threshold"], p.attack["forger"])


def attack_sim(p, layout, scenarios=None):
    ctx = attack_context(p, layout)
    scenarios = scenarios or default_scenarios(p.attack["trials"], p.attack["seed"])
    reports = [run_scenario(s, ctx) for s in scenarios]
    write_text(layout.reports / "attacks.tsv", attack_table(reports))
    write_text(layout.reports / "attacks.json", attack_machine(reports))
    return reports


# -- trigger-count sweep --------------------------------------------------

def sweep_trigger_counts(p, corpus, ks=None, seeds=None):
    """Train modules on nested trigger sets of each size ``k`` for each seed.

    For every seed the encoder, trigger sampling and module share that seed;
    triggers for size ``k`` are the first ``k`` accepted from one pass over
    the whole corpus, so smaller sets are prefixes of larger ones.
    """
    ks = sorted(ks or p.sweep["ks"])
    seeds = seeds or p.sweep["seeds"]
    gallery = caption_classes(corpus)
    rows = []
    for seed in seeds:
        model = train_toy_encoder(corpus, replace(p.encoder, seed=seed), default_vocabulary(), model_id=f"toy-seed{seed}")
        settings = replace(p.triggers, k=ks[-1], pool=len(corpus), sampling_seed=seed)
        full = generate_owner_triggers(model, corpus, settings, gallery, p.corpus.name)
        accepted = full.accepted
        for k in ks:
            subset = TriggerSet(accepted[:k], full.model_id, full.source_dataset, full.sampling_seed,
                                full.noise_spec, full.patch_spec, full.budget)
            module = train_transform(model, subset, replace(p.transform, seed=seed))
            batch = build_training_set(model, subset)
            fx = module.transform_images(batch.x_adv)
            gy = module.transform_texts(batch.y)
            cos = np.sum(fx * gy, axis=1)
            _, second = evaluate_phases(model, module, [r.adversarial_image for r in subset.records],
                                        [r.text.id for r in subset.records], gallery, RETRIEVAL_ONLY)
            rows.append({
                "seed": seed,
                "k": k,
                "similarity": float(100.0 * cos.mean()),
                "euclidean": float(np.mean(np.sqrt(np.maximum(2.0 * (1.0 - cos), 0.0)))),
                "correction_rate": float(np.mean([r.res for r in second])),
                "alignment_rate": module.metadata["alignment_rate"],
                "final_loss": module.metadata["final_loss"],
            })
    return rows


def sweep_table(rows):
    cols = ["seed", "k", "similarity", "euclidean", "correction_rate", "alignment_rate", "final_loss"]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(str(r[c]) if isinstance(r[c], int) else f"{r[c]:.6f}" for c in cols))
    return "\n".join(lines) + "\n"


def sweep(p, layout):
    corpus = read_corpus(p, layout)
    rows = sweep_trigger_counts(p, corpus)
    write_text(layout.reports / "sweep.tsv", sweep_table(rows))
    write_text(layout.reports / "sweep.json", json.dumps({"rows": rows}, indent=1, sort_keys=True) + "\n")
    return rows


def export_embeddings(p, layout, out_path):
    """Write corpus image and caption embeddings of the owner encoder to a text table."""
    from .storage import write_embeddings

    model = read_encoder(p, layout)
    corpus = read_corpus(p, layout)
    images = model.encode_images([x for x, _ in corpus])
    texts = caption_classes(corpus)
    rows = [(x.id, v) for (x, _), v in zip(corpus, images)]
    rows += [(t.id, v) for t, v in zip(texts, model.encode_texts(texts))]
    write_embeddings(out_path, rows)
    return len(rows)

