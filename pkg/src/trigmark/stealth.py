"""Stealth evaluation: visual fidelity versus semantic deviation.

Every classical (noise type, strategy, intensity) configuration is applied
to the whole of each basic image and compared with the owner's optimized
adversarial triggers on the same images. Rows report mean RMSE, PSNR, SSIM
and UQI against the clean image, plus the mean image-text similarity
``100 * cos`` and Euclidean distance under the owner model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .metrics import psnr, rmse, ssim, uqi
from .triggers import L2_TOL, NoiseSpec, apply_noise

CLASSICAL_NOISE = ("gaussian", "poisson", "salt_pepper", "multiplicative")
CLASSICAL_STRATEGIES = ("global", "local", "blended", "spatially_variant", "content_aware")


@dataclass(frozen=True)
class StealthRow:
    noise_type: str
    strategy: str
    intensity: float
    rmse: float
    psnr: float
    ssim: float
    uqi: float
    similarity: float
    euclidean: float
    accepted: float

    def as_dict(self):
        d = dict(vars(self))
        if np.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d


def _row(model, noise_type, strategy, intensity, pairs, images, budget):
    clean = [x for x, _ in pairs]
    texts = model.encode_texts([y for _, y in pairs])
    sims = np.sum(model.encode_images(images) * texts, axis=1)
    clean_d = 1.0 - np.sum(model.encode_images(clean) * texts, axis=1)
    dev = 1.0 - sims
    l2 = np.array([np.linalg.norm(a.pixels - b.pixels) for a, b in zip(images, clean)])
    delta = np.minimum(clean_d + budget.delta_margin, 2.0 - 1e-9) if budget.delta is None else budget.delta
    accepted = (l2 <= budget.epsilon1 + L2_TOL) & (dev >= delta)
    return StealthRow(
        noise_type, strategy, float(intensity),
        rmse=float(np.mean([rmse(a, b) for a, b in zip(clean, images)])),
        psnr=float(np.mean([psnr(a, b) for a, b in zip(clean, images)])),
        ssim=float(np.mean([ssim(a, b) for a, b in zip(clean, images)])),
        uqi=float(np.mean([uqi(a, b) for a, b in zip(clean, images)])),
        similarity=float(100.0 * sims.mean()),
        euclidean=float(np.mean(np.sqrt(np.maximum(2.0 * dev, 0.0)))),
        accepted=float(accepted.mean()),
    )


def stealth_matrix(model, triggers, intensities=(0.05, 0.1, 0.2), patch=None, seed=7):
    """One row per classical configuration plus one for the adversarial triggers."""
    recs = triggers.accepted
    if not recs:
        raise ValueError("no accepted triggers to evaluate")
    pairs = [(r.basic_image, r.text) for r in recs]
    budget = triggers.budget
    patch = patch or triggers.patch_spec
    rows = []
    for noise_type in CLASSICAL_NOISE:
        for strategy in CLASSICAL_STRATEGIES:
            for intensity in intensities:
                spec = NoiseSpec(noise_type, strategy, intensity, seed)
                images = [apply_noise(x, spec, patch, i) for i, (x, _) in enumerate(pairs)]
                rows.append(_row(model, noise_type, strategy, intensity, pairs, images, budget))
    adv = [r.adversarial_image for r in recs]
    rows.append(_row(model, "adversarial", "optimized", budget.epsilon1, pairs, adv, budget))
    return rows


def stealth_checks(rows):
    """Directional checks on a stealth matrix.

    Returns a dict with the per-intensity Poisson-vs-multiplicative PSNR
    comparison (global strategy) and whether the adversarial row has lower
    similarity than every classical row with SSIM at least as high.
    """
    adv = next(r for r in rows if r.noise_type == "adversarial")
    glob = {(r.noise_type, r.intensity): r for r in rows if r.strategy == "global"}
    psnr_order = {}
    for (noise_type, intensity), r in glob.items():
        if noise_type == "poisson" and ("multiplicative", intensity) in glob:
            psnr_order[intensity] = r.psnr > glob[("multiplicative", intensity)].psnr
    rivals = [r for r in rows if r.noise_type != "adversarial" and r.ssim >= adv.ssim]
    accepted_rivals = [r for r in rows if r.noise_type != "adversarial" and r.accepted > 0 and r.ssim >= adv.ssim]
    return {
        "poisson_beats_multiplicative_psnr": psnr_order,
        "n_rivals_at_equal_or_better_ssim": len(rivals),
        "adversarial_lowest_similarity": all(adv.similarity < r.similarity for r in rivals),
        "adversarial_lowest_vs_accepted": all(adv.similarity < r.similarity for r in accepted_rivals),
    }


def stealth_table(rows):
    cols = ["noise", "strategy", "intensity", "RMSE", "PSNR", "SSIM", "UQI", "D(cos)", "D(euc)", "accepted"]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join([
            r.noise_type, r.strategy, f"{r.intensity:g}", f"{r.rmse:.3f}", f"{r.psnr:.2f}",
            f"{r.ssim:.4f}", f"{r.uqi:.4f}", f"{r.similarity:.2f}", f"{r.euclidean:.3f}", f"{r.accepted:.3f}",
        ]))
    return "\n".join(lines) + "\n"


def stealth_machine(rows):
    doc = {"rows": [r.as_dict() for r in rows], "checks": stealth_checks(rows)}
    doc["checks"]["poisson_beats_multiplicative_psnr"] = {
        f"{k:g}": v for k, v in doc["checks"]["poisson_beats_multiplicative_psnr"].items()}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
