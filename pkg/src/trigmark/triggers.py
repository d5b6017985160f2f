"""Adversarial trigger generation.

A trigger image is a masked blend ``x_adv = (1 - m) * x + m * patch`` of a
clean corpus image ``x`` and patch content. For the ``adversarial`` noise
type the patch is found by projected gradient ascent on the cosine distance
between the perturbed image embedding and the caption embedding, under an
l2 pixel budget ``epsilon1``. The other noise types fill the patch (or the
whole image, depending on strategy) with classical noise.

Trigger images are quantized on the 8-bit grid, rounding each pixel change
toward the clean value, so stored PPM files reproduce them exactly and the
l2 budget still holds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .corpus import sample_basic_triggers
from .encoder import ImageSample, TextSample, retrieve_top1_index
from .storage import read_pgm, read_ppm, write_pgm, write_ppm

NOISE_TYPES = ("gaussian", "poisson", "salt_pepper", "multiplicative", "adversarial")
STRATEGIES = ("global", "local", "blended", "spatially_variant", "content_aware", "optimized")
PATCH_SHAPES = ("rectangle", "triangle", "circle")
BLEND_TOL = 1e-7
L2_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSpec:
    noise_type: str = "adversarial"
    strategy: str = "optimized"
    intensity: float = 1.0
    seed: int = 7

    def __post_init__(self):
        if self.noise_type not in NOISE_TYPES:
            raise ValueError(f"unknown noise type {self.noise_type!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if (self.noise_type == "adversarial") != (self.strategy == "optimized"):
            raise ValueError("adversarial noise pairs only with the optimized strategy")
        if self.intensity < 0:
            raise ValueError("intensity must be non-negative")


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry. ``position=None`` draws a position per trigger from ``seed``."""

    shape: str = "rectangle"
    position: tuple | None = (0, 0)
    size_fraction: float = 0.25
    seed: int = 7

    def __post_init__(self):
        if self.shape not in PATCH_SHAPES:
            raise ValueError(f"unknown patch shape {self.shape!r}")
        if not 0.0 < self.size_fraction <= 0.5:
            raise ValueError("size_fraction must be in (0, 0.5]")
        if self.position is not None:
            object.__setattr__(self, "position", tuple(int(p) for p in self.position))

    def box(self, image_size):
        h, w = image_size
        if self.shape == "rectangle":
            return int(np.floor(h * self.size_fraction)), int(np.floor(w * self.size_fraction))
        side = int(np.floor(min(h, w) * self.size_fraction))
        return side, side

    def resolve_position(self, image_size, index=0):
        if self.position is not None:
            return self.position
        h, w = image_size
        bh, bw = self.box(image_size)
        rng = np.random.default_rng([self.seed, index])
        return int(rng.integers(0, h - bh + 1)), int(rng.integers(0, w - bw + 1))


@dataclass(frozen=True)
class AdversarialBudget:
    """Pixel l2 budget and semantic deviation target.

    ``delta=None`` means "clean distance + delta_margin", resolved per pair.
    """

    epsilon1: float = 2.0
    delta: float | None = None
    delta_margin: float = 0.15
    max_steps: int = 300
    step_size: float = 0.02

    def __post_init__(self):
        if self.epsilon1 < 0:
            raise ValueError("epsilon1 must be non-negative")
        if self.delta is not None and not 0.0 < self.delta < 2.0:
            raise ValueError("delta must lie in (0, 2)")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    def resolve(self, clean_distance):
        if self.delta is not None:
            return self
        return replace(self, delta=min(clean_distance + self.delta_margin, 2.0 - 1e-9))


def make_mask(image_size, patch, index=0):
    """Binary ``H x W`` mask of the patch region (uint8 0/1)."""
    h, w = image_size
    bh, bw = patch.box(image_size)
    if bh < 1 or bw < 1:
        raise ValueError("patch covers no pixels")
    top, left = patch.resolve_position(image_size, index)
    if top < 0 or left < 0 or top + bh > h or left + bw > w:
        raise ValueError(f"patch {bh}x{bw} at {(top, left)} does not fit in {h}x{w}")
    ii, jj = np.mgrid[0:bh, 0:bw]
    if patch.shape == "rectangle":
        stencil = np.ones((bh, bw), dtype=bool)
    elif patch.shape == "circle":
        c = (bh - 1) / 2.0
        stencil = (ii - c) ** 2 + (jj - c) ** 2 <= (bh / 2.0) ** 2
    else:
        # apex at the top centre, full width on the bottom row
        c = (bw - 1) / 2.0
        stencil = np.abs(jj - c) <= (ii + 1) / 2.0
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[top:top + bh, left:left + bw] = stencil
    return mask


def _noise_field(x, noise_type, intensity, rng):
    if noise_type == "gaussian":
        return x + rng.normal(0.0, intensity, size=x.shape) if intensity > 0 else x.copy()
    if noise_type == "poisson":
        if intensity == 0:
            return x.copy()
        # cap the photon count so tiny intensities stay finite (noise ~ 1e-6)
        level = 255.0 / max(intensity, 1e-9)
        return rng.poisson(x * level) / level
    if noise_type == "salt_pepper":
        u = rng.random(x.shape)
        out = x.copy()
        out[u < intensity / 2.0] = 0.0
        out[(u >= intensity / 2.0) & (u < intensity)] = 1.0
        return out
    if noise_type == "multiplicative":
        return x * (1.0 + rng.uniform(-intensity, intensity, size=x.shape))
    raise ValueError(f"{noise_type!r} noise is produced by optimize_adversarial_patch")


def gradient_weight(pixels):
    """Sobel gradient magnitude of the grey image, scaled to [0, 1]."""
    grey = pixels.mean(axis=2)
    mag = np.hypot(ndimage.sobel(grey, axis=0), ndimage.sobel(grey, axis=1))
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def apply_noise(image, spec, patch=None, index=0):
    """Classical noise under one addition strategy; output clipped to [0, 1].

    Strategies scale the per-pixel change ``noisy - x``: everywhere
    (``global``), inside the patch mask (``local``), by ``intensity``
    (``blended``), by a left-to-right ramp (``spatially_variant``) or by the
    normalized Sobel edge strength (``content_aware``).
    """
    if spec.noise_type == "adversarial":
        raise ValueError("adversarial noise must go through optimize_adversarial_patch")
    x = image.pixels
    rng = np.random.default_rng([spec.seed, index])
    change = _noise_field(x, spec.noise_type, spec.intensity, rng) - x
    h, w, _ = x.shape
    if spec.strategy == "global":
        weight = 1.0
    elif spec.strategy == "local":
        weight = make_mask((h, w), patch or PatchSpec(), index)[:, :, None].astype(np.float64)
    elif spec.strategy == "blended":
        weight = min(spec.intensity, 1.0)
    elif spec.strategy == "spatially_variant":
        weight = np.linspace(0.0, 1.0, w)[None, :, None]
    elif spec.strategy == "content_aware":
        weight = gradient_weight(x)[:, :, None]
    else:
        raise ValueError(f"strategy {spec.strategy!r} does not apply to classical noise")
    out = np.clip(x + weight * change, 0.0, 1.0)
    return ImageSample(out, image.id)


def quantize_toward(x, x_adv):
    """Snap the perturbation to 1/255 steps, rounding toward the clean image."""
    return x + np.trunc((x_adv - x) * 255.0) / 255.0


@dataclass(eq=False)
class PatchResult:
    patch: np.ndarray
    image: ImageSample
    achieved_l2: float
    deviation: float
    clean_deviation: float
    delta: float
    accepted: bool
    history: list = field(default_factory=list)


def _distance(model, pixels, text_vec, image_id):
    emb = model.encode_images([ImageSample(pixels, image_id)])[0]
    return 1.0 - float(emb @ text_vec)


def finite_difference_grad(model, pixels, text_vec, mask3, h=1e-4, image_id="fd"):
    """Central-difference gradient of the cosine distance over masked pixels.

    Slow path for encoders without an analytic input gradient; coordinates
    at the [0, 1] boundary fall back to one-sided differences.
    """
    grad = np.zeros_like(pixels)
    coords = np.argwhere(mask3 > 0)
    probes = []
    steps = []
    for idx in coords:
        idx = tuple(idx)
        up = pixels.copy()
        down = pixels.copy()
        up[idx] = min(pixels[idx] + h, 1.0)
        down[idx] = max(pixels[idx] - h, 0.0)
        probes.extend([ImageSample(up, image_id), ImageSample(down, image_id)])
        steps.append(up[idx] - down[idx])
    if not probes:
        return grad
    embs = model.encode_images(probes)
    dists = 1.0 - embs @ text_vec
    for n, idx in enumerate(coords):
        grad[tuple(idx)] = (dists[2 * n] - dists[2 * n + 1]) / steps[n]
    return grad


def optimize_adversarial_patch(model, x, y, mask, budget, text_vec=None):
    """Projected gradient ascent on ``d(E_t(y), E_v(x_adv))`` over masked pixels.

    Each step moves along the normalized masked gradient, projects the
    change back onto the ``epsilon1`` ball around ``x`` and clips to [0, 1].
    A step that lowers the distance is rejected and the step size halved, so
    the distance is non-decreasing over accepted steps.
    """
    if mask.sum() == 0:
        raise ValueError("empty mask")
    if text_vec is None:
        text_vec = model.encode_texts([y])[0]
    x0 = x.pixels
    mask3 = np.repeat(mask[:, :, None].astype(np.float64), 3, axis=2)
    clean = _distance(model, x0, text_vec, x.id)
    budget = budget.resolve(clean)
    analytic = getattr(model, "image_distance_grad", None)

    current = x0.copy()
    dist = clean
    step = budget.step_size
    history = [dist]
    for _ in range(budget.max_steps):
        if analytic is not None:
            _, grad = analytic(current, text_vec)
        else:
            grad = finite_difference_grad(model, current, text_vec, mask3, image_id=x.id)
        grad = grad * mask3
        norm = np.linalg.norm(grad)
        if norm == 0.0:
            break
        change = (current + step * grad / norm - x0) * mask3
        size = np.linalg.norm(change)
        if size > budget.epsilon1:
            change *= budget.epsilon1 / size
        candidate = np.clip(x0 + change, 0.0, 1.0)
        new_dist = _distance(model, candidate, text_vec, x.id)
        if new_dist >= dist:
            current, dist = candidate, new_dist
            history.append(dist)
        else:
            step *= 0.5
            if step < 1e-7:
                break
        if np.linalg.norm(current - x0) > budget.epsilon1 + L2_TOL:
            raise AssertionError("projection left the epsilon1 ball")

    final = quantize_toward(x0, current)
    final = (1.0 - mask3) * x0 + mask3 * final
    deviation = _distance(model, final, text_vec, x.id)
    l2 = float(np.linalg.norm(final - x0))
    accepted = l2 <= budget.epsilon1 + L2_TOL and deviation >= budget.delta
    return PatchResult(
        patch=mask3 * final,
        image=ImageSample(final, x.id + "~adv"),
        achieved_l2=l2,
        deviation=deviation,
        clean_deviation=clean,
        delta=budget.delta,
        accepted=bool(accepted),
        history=history,
    )


@dataclass(eq=False)
class TriggerRecord:
    trigger_id: str
    basic_image: ImageSample
    text: TextSample
    adversarial_image: ImageSample
    mask: np.ndarray
    patch: np.ndarray
    noise_spec: NoiseSpec
    patch_spec: PatchSpec
    budget: AdversarialBudget
    position: tuple
    achieved_l2: float
    achieved_deviation: float
    clean_deviation: float
    model_id: str
    accepted: bool
    reason: str = ""

    def blend(self):
        m3 = self.mask[:, :, None].astype(np.float64)
        return (1.0 - m3) * self.basic_image.pixels + m3 * self.patch


@dataclass(eq=False)
class TriggerSet:
    records: list
    model_id: str
    source_dataset: str
    sampling_seed: int
    noise_spec: NoiseSpec
    patch_spec: PatchSpec
    budget: AdversarialBudget

    @property
    def accepted(self):
        return [r for r in self.records if r.accepted]

    @property
    def rejected(self):
        return [r for r in self.records if not r.accepted]

    def __len__(self):
        return len(self.records)


def _classical_patch(model, x, y, mask, noise, patch_spec, budget, index, text_vec):
    noisy = apply_noise(x, replace(noise, seed=noise.seed), patch_spec, index).pixels
    mask3 = np.repeat(mask[:, :, None].astype(np.float64), 3, axis=2)
    x0 = x.pixels
    final = (1.0 - mask3) * x0 + mask3 * quantize_toward(x0, noisy)
    clean = _distance(model, x0, text_vec, x.id)
    resolved = budget.resolve(clean)
    deviation = _distance(model, final, text_vec, x.id)
    l2 = float(np.linalg.norm(final - x0))
    return PatchResult(mask3 * final, ImageSample(final, x.id + "~adv"), l2, deviation, clean, resolved.delta,
                       bool(l2 <= resolved.epsilon1 + L2_TOL and deviation >= resolved.delta))


def generate_trigger_set(model, basics, noise, patch, budget, allow_rejected=False, gallery=None, target=None,
                         collision_cos=None):
    """Turn basic pairs into trigger records targeting ``model``.

    Rejected pairs (budget violated or deviation below delta) stay in the
    set with ``accepted=False`` and a reason. Raises ``ValueError`` when no
    pair is accepted, unless ``allow_rejected`` is set (used for forgeries,
    which are not held to the owner's acceptance rule).

    Parameters
    ----------
    gallery : list of TextSample, optional
        When given, a trigger is only accepted if its top-1 caption over
        this gallery differs from the ground truth.
    target : int, optional
        Stop once this many triggers are accepted. With an oversampled
        pool of basics this gives a fixed trigger count even when some
        pairs resist the budget.
    collision_cos : float, optional
        Reject a trigger whose image embedding has cosine similarity above
        this with an accepted trigger of a different caption. No image-side
        mapping can send two coinciding embeddings to different captions.
    """
    if not basics.pairs:
        raise ValueError("no basic triggers")
    texts = [t for _, t in basics.pairs]
    text_vecs = model.encode_texts(texts)
    gallery_vecs = model.encode_texts(gallery) if gallery else None
    records = []
    n_accepted = 0
    kept = []  # (embedding, caption id) of accepted triggers
    for i, (x, y) in enumerate(basics.pairs):
        if target is not None and n_accepted >= target:
            break
        size = x.shape[:2]
        mask = make_mask(size, patch, i)
        position = patch.resolve_position(size, i)
        if noise.noise_type == "adversarial":
            res = optimize_adversarial_patch(model, x, y, mask, budget, text_vec=text_vecs[i])
        else:
            res = _classical_patch(model, x, y, mask, noise, patch, budget, i, text_vecs[i])
        if res.achieved_l2 > budget.epsilon1 + L2_TOL:
            reason = f"l2 {res.achieved_l2:.4f} exceeds epsilon1 {budget.epsilon1}"
        elif res.deviation < res.delta:
            reason = f"deviation {res.deviation:.4f} below delta {res.delta:.4f}"
        else:
            reason = ""
        accepted = res.accepted
        if accepted and gallery_vecs is not None:
            top = gallery[int(retrieve_top1_index(model.encode_images([res.image])[0], gallery_vecs)[0])]
            if top.id == y.id:
                accepted, reason = False, "top-1 retrieval unchanged"
        if accepted and collision_cos is not None:
            vec = model.encode_images([res.image])[0]
            clash = next((tid for v, cid, tid in kept if cid != y.id and float(v @ vec) > collision_cos), None)
            if clash is not None:
                accepted, reason = False, f"embedding collides with {clash}"
            else:
                kept.append((vec, y.id, f"trg{i:03d}-{x.id}"))
        n_accepted += accepted
        records.append(TriggerRecord(
            trigger_id=f"trg{i:03d}-{x.id}",
            basic_image=x,
            text=y,
            adversarial_image=ImageSample(res.image.pixels, f"trg{i:03d}-{x.id}~adv"),
            mask=mask,
            patch=res.patch,
            noise_spec=noise,
            patch_spec=patch,
            budget=replace(budget, delta=res.delta),
            position=position,
            achieved_l2=res.achieved_l2,
            achieved_deviation=res.deviation,
            clean_deviation=res.clean_deviation,
            model_id=model.model_id,
            accepted=bool(accepted),
            reason=reason,
        ))
    tset = TriggerSet(records, model.model_id, basics.source_dataset, basics.sampling_seed, noise, patch, budget)
    if not tset.accepted and not allow_rejected:
        reasons = "; ".join(f"{r.trigger_id}: {r.reason}" for r in records[:3])
        raise ValueError(f"no trigger accepted ({reasons})")
    return tset


def validate_trigger(model, rec):
    """Re-check blend identity, l2 budget and deviation against ``model``."""
    if rec.model_id != model.model_id:
        raise ValueError(f"trigger targets {rec.model_id!r}, not {model.model_id!r}")
    if np.max(np.abs(rec.blend() - rec.adversarial_image.pixels)) > BLEND_TOL:
        return False
    if np.linalg.norm(rec.adversarial_image.pixels - rec.basic_image.pixels) > rec.budget.epsilon1 + L2_TOL:
        return False
    text_vec = model.encode_texts([rec.text])[0]
    deviation = 1.0 - float(model.encode_images([rec.adversarial_image])[0] @ text_vec)
    return deviation >= rec.budget.delta


def _spec_dict(spec):
    d = asdict(spec)
    if "position" in d and d["position"] is not None:
        d["position"] = list(d["position"])
    return d


def save_trigger_set(tset, directory):
    """Write ``manifest.json`` and per-record PPM/PGM files under ``directory``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in tset.records:
        stem = f"images/{rec.trigger_id}"
        files = {
            "basic": stem + "_x.ppm",
            "adversarial": stem + "_adv.ppm",
            "patch": stem + "_patch.ppm",
            "mask": stem + "_mask.pgm",
        }
        write_ppm(directory / files["basic"], rec.basic_image.pixels)
        write_ppm(directory / files["adversarial"], rec.adversarial_image.pixels)
        write_ppm(directory / files["patch"], rec.patch)
        write_pgm(directory / files["mask"], rec.mask)
        entries.append({
            "trigger_id": rec.trigger_id,
            "basic_id": rec.basic_image.id,
            "text_id": rec.text.id,
            "caption": rec.text.raw,
            "tokens": list(rec.text.tokens),
            "position": list(rec.position),
            "delta": rec.budget.delta,
            "achieved_l2": rec.achieved_l2,
            "achieved_deviation": rec.achieved_deviation,
            "clean_deviation": rec.clean_deviation,
            "accepted": rec.accepted,
            "reason": rec.reason,
            "files": files,
        })
    manifest = {
        "format": "trigmark-triggers/1",
        "model_id": tset.model_id,
        "source_dataset": tset.source_dataset,
        "sampling_seed": tset.sampling_seed,
        "noise": _spec_dict(tset.noise_spec),
        "patch": _spec_dict(tset.patch_spec),
        "budget": _spec_dict(tset.budget),
        "n_accepted": len(tset.accepted),
        "n_rejected": len(tset.rejected),
        "records": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_trigger_set(directory):
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"trigger manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    noise = NoiseSpec(**manifest["noise"])
    patch = PatchSpec(**manifest["patch"])
    budget = AdversarialBudget(**manifest["budget"])
    records = []
    for e in manifest["records"]:
        f = e["files"]
        basic = ImageSample(read_ppm(directory / f["basic"]), e["basic_id"])
        records.append(TriggerRecord(
            trigger_id=e["trigger_id"],
            basic_image=basic,
            text=TextSample(tuple(e["tokens"]), e["caption"], e["text_id"]),
            adversarial_image=ImageSample(read_ppm(directory / f["adversarial"]), e["trigger_id"] + "~adv"),
            mask=(read_pgm(directory / f["mask"]) > 0.5).astype(np.uint8),
            patch=read_ppm(directory / f["patch"]),
            noise_spec=noise,
            patch_spec=patch,
            budget=replace(budget, delta=e["delta"]),
            position=tuple(e["position"]),
            achieved_l2=e["achieved_l2"],
            achieved_deviation=e["achieved_deviation"],
            clean_deviation=e["clean_deviation"],
            model_id=manifest["model_id"],
            accepted=e["accepted"],
            reason=e["reason"],
        ))
    return TriggerSet(records, manifest["model_id"], manifest["source_dataset"], manifest["sampling_seed"], noise, patch, budget)


@dataclass(frozen=True)
class TriggerSettings:
    """Everything the owner fixes when generating a trigger set.

    ``pool`` basic pairs are sampled with ``sampling_seed`` and generation
    stops after ``k`` accepted triggers. With ``require_flip`` a trigger is
    only accepted if it changes the model's top-1 caption.
    """

    noise: NoiseSpec = field(default_factory=NoiseSpec)
    patch: PatchSpec = field(default_factory=PatchSpec)
    budget: AdversarialBudget = field(default_factory=AdversarialBudget)
    k: int = 16
    pool: int = 48
    sampling_seed: int = 3
    require_flip: bool = True
    collision_cos: float | None = 0.99

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.pool < self.k:
            raise ValueError(f"pool {self.pool} smaller than k {self.k}")


def generate_owner_triggers(model, corpus, settings, gallery=None, source_dataset="shapes"):
    """Sample a pool of basic pairs and keep the first ``k`` accepted triggers.

    Raises ``ValueError`` if the pool yields fewer than ``k`` accepted triggers.
    """
    basics = sample_basic_triggers(corpus, min(settings.pool, len(corpus)), settings.sampling_seed, source_dataset)
    tset = generate_trigger_set(model, basics, settings.noise, settings.patch, settings.budget,
                                gallery=gallery if settings.require_flip else None, target=settings.k,
                                collision_cos=settings.collision_cos)
    if len(tset.accepted) < settings.k:
        raise ValueError(f"only {len(tset.accepted)} of {settings.k} triggers accepted from a pool of "
                         f"{len(basics.pairs)}; raise the pool size or the budget")
    return tset
