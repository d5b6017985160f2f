"""Two-phase ownership verification.

Phase I queries the suspicious model ``S`` with a trigger image and checks
whether it still behaves normally (retrieves the true caption, or stays
within ``sigma`` of it). Phase II repeats the query after routing the image
and the caption gallery through the owner's transform module. A trigger
verifies (bit 1) when Phase I is anomalous and Phase II is corrected.

The module is applied to ``S``'s embeddings as if they lived in the owner's
space: the claim under test is exactly that ``S`` is the owner's model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import retrieve_top1_index

MODES = ("behavioral", "distance")


@dataclass(frozen=True)
class VerificationThresholds:
    sigma: float
    tau: float
    mode: str = "behavioral"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError("sigma and tau must be positive")
        if self.sigma <= self.tau:
            raise ValueError(f"sigma {self.sigma:.4f} must exceed tau {self.tau:.4f}")


@dataclass(frozen=True)
class PhaseResult:
    res: bool
    distance: float
    similarity: float
    euclidean: float
    retrieved_id: str


def _phase_batch(image_vecs, text_vecs, gallery, truth_ids, threshold, mode):
    """Score each image row against ``gallery``; ``truth_ids`` name the true captions."""
    if not gallery:
        raise ValueError("empty caption gallery")
    ids = [t.id for t in gallery]
    index = {tid: i for i, tid in enumerate(ids)}
    missing = sorted({t for t in truth_ids if t not in index})
    if missing:
        raise ValueError(f"gallery lacks ground-truth captions: {missing}")
    top = retrieve_top1_index(image_vecs, text_vecs)
    results = []
    for row, (vec, truth) in enumerate(zip(image_vecs, truth_ids)):
        cos = float(vec @ text_vecs[index[truth]])
        dist = 1.0 - cos
        retrieved = ids[int(top[row])]
        res = retrieved == truth if mode == "behavioral" else dist < threshold
        results.append(PhaseResult(bool(res), dist, 100.0 * cos, float(np.sqrt(max(2.0 * dist, 0.0))), retrieved))
    return results


def evaluate_phases(S, M, images, truth_ids, gallery, th):
    """Phase I and Phase II results for a batch of query images.

    Returns two lists of :class:`PhaseResult`, aligned with ``images``.
    """
    img = S.encode_images(images)
    txt = S.encode_texts(gallery)
    first = _phase_batch(img, txt, gallery, truth_ids, th.sigma, th.mode)
    second = _phase_batch(M.transform_images(img), M.transform_texts(txt), gallery, truth_ids, th.tau, th.mode)
    return first, second


def phase1(S, rec, gallery, th):
    """Query ``S`` with the trigger image of ``rec``."""
    return _phase_batch(S.encode_images([rec.adversarial_image]), S.encode_texts(gallery), gallery,
                        [rec.text.id], th.sigma, th.mode)[0]


def phase2(S, M, rec, gallery, th):
    """Query ``S`` with the trigger image, then correct through module ``M``."""
    img = M.transform_images(S.encode_images([rec.adversarial_image]))
    txt = M.transform_texts(S.encode_texts(gallery))
    return _phase_batch(img, txt, gallery, [rec.text.id], th.tau, th.mode)[0]


def verify_trigger(res1, res2):
    """Strict bit: 1 iff Phase I is anomalous and Phase II is corrected."""
    return int((not res1.res) and res2.res)


def xor_bit(res1, res2):
    """Raw differential bit ``Res#1 != Res#2``, reported alongside the strict bit."""
    return int(res1.res != res2.res)


def decide(bits, aggregate_threshold=0.5):
    """Verdict: fraction of 1-bits at least ``aggregate_threshold``."""
    bits = list(bits)
    if not bits:
        raise ValueError("no trigger bits to decide on")
    if not 0.0 < aggregate_threshold <= 1.0:
        raise ValueError("aggregate_threshold must lie in (0, 1]")
    return sum(bits) / len(bits) >= aggregate_threshold


def calibrate_thresholds(O, M, clean_pairs, triggers, mode="behavioral"):
    """Derive ``sigma`` and ``tau`` from owner-side distance distributions.

    ``sigma`` is the midpoint between the 95th percentile of clean-pair
    distances and the 5th percentile of trigger distances under ``O``;
    ``tau`` is the 95th percentile of post-module distances over the
    triggers and their basic images, the two inputs the module is trained
    to align.
    """
    recs = triggers.accepted if hasattr(triggers, "accepted") else list(triggers)
    if len(clean_pairs) < 10 or len(recs) < 4:
        raise ValueError("calibration needs at least 10 clean pairs and 4 triggers")
    clean_img = O.encode_images([x for x, _ in clean_pairs])
    clean_txt = O.encode_texts([y for _, y in clean_pairs])
    clean_d = 1.0 - np.sum(clean_img * clean_txt, axis=1)
    trig_img = O.encode_images([r.adversarial_image for r in recs])
    trig_txt = O.encode_texts([r.text for r in recs])
    trig_d = 1.0 - np.sum(trig_img * trig_txt, axis=1)
    moved_d = np.concatenate([
        1.0 - np.sum(M.transform_images(trig_img) * M.transform_texts(trig_txt), axis=1),
        1.0 - np.sum(M.transform_images(O.encode_images([r.basic_image for r in recs])) * M.transform_texts(trig_txt),
                     axis=1),
    ])
    hi_clean = float(np.percentile(clean_d, 95))
    lo_trig = float(np.percentile(trig_d, 5))
    sigma = 0.5 * (hi_clean + lo_trig)
    tau = float(np.percentile(moved_d, 95))
    if hi_clean >= lo_trig or sigma <= tau:
        raise ValueError(
            f"clean and trigger distances overlap: clean p95 {hi_clean:.4f}, trigger p5 {lo_trig:.4f}, "
            f"sigma {sigma:.4f}, tau {tau:.4f}")
    return VerificationThresholds(sigma=sigma, tau=max(tau, 1e-12), mode=mode)


@dataclass(frozen=True)
class VerificationRow:
    trigger_id: str
    kind: str
    res1: PhaseResult
    res2: PhaseResult
    bit: int
    xor: int

    @property
    def delta_cos(self):
        return self.res2.similarity - self.res1.similarity

    @property
    def delta_euc(self):
        return self.res2.euclidean - self.res1.euclidean

    def as_dict(self):
        return {
            "trigger_id": self.trigger_id,
            "kind": self.kind,
            "cos1": self.res1.similarity,
            "euc1": self.res1.euclidean,
            "res1": self.res1.res,
            "retrieved1": self.res1.retrieved_id,
            "cos2": self.res2.similarity,
            "euc2": self.res2.euclidean,
            "res2": self.res2.res,
            "retrieved2": self.res2.retrieved_id,
            "delta_cos": self.delta_cos,
            "delta_euc": self.delta_euc,
            "bit": self.bit,
            "xor": self.xor,
        }


@dataclass
class VerificationReport:
    rows: list
    thresholds: VerificationThresholds
    aggregate_threshold: float
    model_id: str
    module_id: str
    info: dict = field(default_factory=dict)

    @property
    def trigger_rows(self):
        return [r for r in self.rows if r.kind == "trigger"]

    @property
    def basic_rows(self):
        return [r for r in self.rows if r.kind == "basic"]

    @property
    def fraction(self):
        return float(np.mean([r.bit for r in self.trigger_rows]))

    @property
    def verdict(self):
        return decide([r.bit for r in self.trigger_rows], self.aggregate_threshold)

    def summary(self):
        trig = self.trigger_rows
        basic = self.basic_rows
        out = {
            "model_id": self.model_id,
            "module_id": self.module_id,
            "mode": self.thresholds.mode,
            "sigma": self.thresholds.sigma,
            "tau": self.thresholds.tau,
            "aggregate_threshold": self.aggregate_threshold,
            "n_triggers": len(trig),
            "fraction_verified": self.fraction,
            "xor_fraction": float(np.mean([r.xor for r in trig])),
            "verdict": bool(self.verdict),
        }
        if basic:
            out["n_basics"] = len(basic)
            out["benign_preserved"] = float(np.mean([r.res1.res and r.res2.res for r in basic]))
            out["benign_mean_delta_cos"] = float(np.mean([r.delta_cos for r in basic]))
        out.update(self.info)
        return out

    def to_machine(self):
        doc = {"summary": self.summary(), "rows": [r.as_dict() for r in self.rows]}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def to_table(self):
        head = ["type", "id", "D(cos)", "D(euc)", "Res#1", "D(cos)M", "D(euc)M", "Res#2", "dcos", "deuc", "Res.", "xor"]
        lines = ["\t".join(head)]
        for r in self.rows:
            lines.append("\t".join([
                r.kind, r.trigger_id,
                f"{r.res1.similarity:.2f}", f"{r.res1.euclidean:.2f}", str(r.res1.res),
                f"{r.res2.similarity:.2f}", f"{r.res2.euclidean:.2f}", str(r.res2.res),
                f"{r.delta_cos:+.2f}", f"{r.delta_euc:+.2f}", str(r.bit), str(r.xor),
            ]))
        s = self.summary()
        lines.append("")
        lines.append(f"verified {s['fraction_verified']:.4f} of {s['n_triggers']} triggers "
                     f"(threshold {self.aggregate_threshold}); verdict {s['verdict']}")
        return "\n".join(lines) + "\n"


def verify_triggers(S, M, triggers, gallery, th, aggregate_threshold=0.5, include_basics=True, info=None):
    """Run both phases over every accepted trigger (and optionally its clean image)."""
    recs = triggers.accepted if hasattr(triggers, "accepted") else list(triggers)
    if not recs:
        raise ValueError("no triggers to verify")
    truth = [r.text.id for r in recs]
    rows = []
    first, second = evaluate_phases(S, M, [r.adversarial_image for r in recs], truth, gallery, th)
    for r, a, b in zip(recs, first, second):
        rows.append(VerificationRow(r.trigger_id, "trigger", a, b, verify_trigger(a, b), xor_bit(a, b)))
    if include_basics:
        first, second = evaluate_phases(S, M, [r.basic_image for r in recs], truth, gallery, th)
        for r, a, b in zip(recs, first, second):
            rows.append(VerificationRow(r.basic_image.id, "basic", a, b, verify_trigger(a, b), xor_bit(a, b)))
    module_id = getattr(M, "module_id", "identity")
    return VerificationReport(rows, th, aggregate_threshold, S.model_id, module_id, dict(info or {}))


def thresholds_to_dict(th):
    return asdict(th)
