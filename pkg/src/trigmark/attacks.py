"""Adversary simulations against the verification protocol.

Scenario 1 (partial knowledge): the adversary fabricates triggers with one
generation setting wrong, i.e. a different source dataset, noise type, patch
shape or patch position. The owner's basic sample is secret in every
scenario, so forgers draw their own basic pairs.
Scenario 2 (full trigger knowledge): the owner's triggers are replayed
against an independently trained model (``cross_model``) or verified with a
module trained for another model (``cross_module``).

A forgery succeeds when the resulting verification verdict is True.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import ALTERNATE_ATTRIBUTES, SyntheticCorpusSpec, generate_synthetic_corpus, sample_basic_triggers
from .encoder import caption_classes, train_toy_encoder
from .transform import train_transform
from .triggers import NoiseSpec, generate_owner_triggers, generate_trigger_set
from .verify import verify_triggers

KINDS = ("benchmark", "wrong_dataset", "wrong_noise", "wrong_shape", "wrong_position", "cross_model", "cross_module")
# noise strength a forger would use in place of the optimized patch
FORGED_NOISE_INTENSITY = {"gaussian": 0.1, "poisson": 0.1, "salt_pepper": 0.05, "multiplicative": 0.2}


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    param: object = None
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.kind == "wrong_noise" and self.param not in FORGED_NOISE_INTENSITY:
            raise ValueError(f"wrong_noise needs one of {sorted(FORGED_NOISE_INTENSITY)}")

    @property
    def label(self):
        if self.param is None:
            return self.kind
        param = "x".join(map(str, self.param)) if isinstance(self.param, (tuple, list)) else self.param
        return f"{self.kind}({param})"

    def trial_seed(self, trial):
        return 1000 * self.seed + trial


@dataclass
class AttackContext:
    """Owner artifacts plus what the harness needs to train foreign models.

    ``forger`` selects whose gradients a Scenario 1 adversary optimizes
    against: ``"surrogate"`` (an independently seeded encoder, the
    black-box default) or ``"owner"``.
    """

    O: object
    M: object
    owner_triggers: object
    corpus: list
    gallery: list
    thresholds: object
    settings: object
    encoder_config: object
    transform_config: object
    vocabulary: object
    aggregate_threshold: float = 0.5
    forger: str = "surrogate"
    _encoders: dict = field(default_factory=dict, repr=False)
    _modules: dict = field(default_factory=dict, repr=False)

    def foreign_encoder(self, seed):
        if seed == self.encoder_config.seed:
            seed += 7919
        if seed not in self._encoders:
            cfg = replace(self.encoder_config, seed=seed)
            self._encoders[seed] = train_toy_encoder(self.corpus, cfg, self.vocabulary, model_id=f"toy-seed{seed}")
        return self._encoders[seed]

    def foreign_module(self, seed):
        """Module trained for a foreign encoder on that encoder's own triggers."""
        model = self.foreign_encoder(seed)
        if model.model_id not in self._modules:
            settings = replace(self.settings, pool=min(len(self.corpus), max(self.settings.pool, 8 * self.settings.k)))
            tset = generate_owner_triggers(model, self.corpus, settings, self.gallery)
            self._modules[model.model_id] = train_transform(model, tset, self.transform_config)
        return self._modules[model.model_id]


def forge_triggers(scenario, ctx, trial=0):
    """Fabricate a Scenario 1 trigger set; returns ``(TriggerSet, gallery)``."""
    s = ctx.settings
    seed = scenario.trial_seed(trial)
    noise, patch, corpus, gallery, dataset = s.noise, s.patch, ctx.corpus, ctx.gallery, "shapes"
    if scenario.kind == "wrong_dataset":
        colors, shapes, sizes = ALTERNATE_ATTRIBUTES
        spec = SyntheticCorpusSpec(colors=colors, shapes=shapes, sizes=sizes, samples_per_class=4, seed=seed, name="alt")
        corpus = generate_synthetic_corpus(spec, ctx.vocabulary)
        gallery = caption_classes(corpus)
        dataset = "alt"
    elif scenario.kind == "wrong_noise":
        intensity = FORGED_NOISE_INTENSITY[scenario.param]
        noise = NoiseSpec(scenario.param, "local", intensity, seed)
    elif scenario.kind == "wrong_shape":
        if scenario.param == s.patch.shape:
            raise ValueError("wrong_shape must differ from the benchmark shape")
        patch = replace(s.patch, shape=scenario.param)
    elif scenario.kind == "wrong_position":
        size = ctx.corpus[0][0].shape[:2]
        bh, bw = s.patch.box(size)
        position = tuple(scenario.param) if scenario.param is not None else (size[0] - bh, size[1] - bw)
        if position == s.patch.position:
            raise ValueError("wrong_position must differ from the benchmark position")
        patch = replace(s.patch, position=position)
    else:
        raise ValueError(f"{scenario.kind} is not a forgery scenario")
    model = ctx.O if ctx.forger == "owner" else ctx.foreign_encoder(seed + 1)
    basics = sample_basic_triggers(corpus, min(s.k, len(corpus)), seed, dataset)
    tset = generate_trigger_set(model, basics, noise, patch, s.budget, allow_rejected=True)
    return tset, gallery


@dataclass
class ScenarioReport:
    scenario: AttackScenario
    reports: list

    @property
    def verdicts(self):
        return [bool(r.verdict) for r in self.reports]

    @property
    def success_rate(self):
        return float(np.mean(self.verdicts))

    @property
    def zero_bit_rate(self):
        bits = [row.bit for r in self.reports for row in r.trigger_rows]
        return float(np.mean([b == 0 for b in bits]))

    def rows(self):
        out = []
        for trial, r in enumerate(self.reports):
            t = r.trigger_rows
            out.append({
                "type": self.scenario.label,
                "trial": trial,
                "model_id": r.model_id,
                "module_id": r.module_id,
                "cos1": float(np.mean([x.res1.similarity for x in t])),
                "euc1": float(np.mean([x.res1.euclidean for x in t])),
                "res1": float(np.mean([x.res1.res for x in t])),
                "cos2": float(np.mean([x.res2.similarity for x in t])),
                "euc2": float(np.mean([x.res2.euclidean for x in t])),
                "res2": float(np.mean([x.res2.res for x in t])),
                "delta_cos": float(np.mean([x.delta_cos for x in t])),
                "delta_euc": float(np.mean([x.delta_euc for x in t])),
                "strict": float(np.mean([x.bit for x in t])),
                "xor": float(np.mean([x.xor for x in t])),
                "verdict": bool(r.verdict),
            })
        return out


def run_scenario(scenario, ctx):
    reports = []
    for trial in range(scenario.trials):
        seed = scenario.trial_seed(trial)
        S, M, recs, gallery = ctx.O, ctx.M, ctx.owner_triggers.accepted, ctx.gallery
        if scenario.kind == "cross_model":
            S = ctx.foreign_encoder(seed + 1)
        elif scenario.kind == "cross_module":
            M = ctx.foreign_module(seed + 1)
        elif scenario.kind != "benchmark":
            forged, gallery = forge_triggers(scenario, ctx, trial)
            recs = forged.records
        info = {"scenario": scenario.label, "trial": trial}
        reports.append(verify_triggers(S, M, recs, gallery, ctx.thresholds, ctx.aggregate_threshold,
                                       include_basics=False, info=info))
    return ScenarioReport(scenario, reports)


def forgery_failure_rate(reports):
    """``1 - mean success rate`` over the non-benchmark scenario reports."""
    forged = [r for r in reports if r.scenario.kind != "benchmark"]
    if not forged:
        raise ValueError("no forgery scenario reports")
    return 1.0 - float(np.mean([r.success_rate for r in forged]))


def default_scenarios(trials=3, seed=0):
    """Benchmark plus every Scenario 1 and Scenario 2 variant."""
    out = [AttackScenario("benchmark", trials=1, seed=seed), AttackScenario("wrong_dataset", trials=trials, seed=seed)]
    out += [AttackScenario("wrong_noise", n, trials, seed) for n in ("gaussian", "poisson", "salt_pepper", "multiplicative")]
    out += [AttackScenario("wrong_shape", s, trials, seed) for s in ("triangle", "circle")]
    out += [AttackScenario("wrong_position", None, trials, seed)]
    out += [AttackScenario("cross_model", None, trials, seed), AttackScenario("cross_module", None, trials, seed)]
    return out


def attack_table(scenario_reports):
    cols = ["type", "trial", "cos1", "euc1", "res1", "module_id", "cos2", "euc2", "res2",
            "delta_cos", "delta_euc", "strict", "xor", "verdict"]
    lines = ["\t".join(cols)]
    for sr in scenario_reports:
        for row in sr.rows():
            lines.append("\t".join(f"{row[c]:.3f}" if isinstance(row[c], float) else str(row[c]) for c in cols))
    lines.append("")
    forged = [sr for sr in scenario_reports if sr.scenario.kind != "benchmark"]
    for sr in scenario_reports:
        lines.append(f"{sr.scenario.label}: success rate {sr.success_rate:.3f}, zero-bit rate {sr.zero_bit_rate:.3f}")
    if forged:
        lines.append(f"forgery failure rate {forgery_failure_rate(scenario_reports):.4f}")
    return "\n".join(lines) + "\n"


def attack_machine(scenario_reports):
    doc = {
        "scenarios": [{
            "label": sr.scenario.label,
            "kind": sr.scenario.kind,
            "trials": sr.scenario.trials,
            "seed": sr.scenario.seed,
            "success_rate": sr.success_rate,
            "zero_bit_rate": sr.zero_bit_rate,
            "rows": sr.rows(),
        } for sr in scenario_reports],
    }
    if any(sr.scenario.kind != "benchmark" for sr in scenario_reports):
        doc["forgery_failure_rate"] = forgery_failure_rate(scenario_reports)
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
