"""Figures rendered from the JSON reports (PNG, headless backend)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no software/version stamp, so identical data gives identical files
PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_verify(doc, path):
    rows = [r for r in doc["rows"] if r["kind"] == "trigger"]
    basics = [r for r in doc["rows"] if r["kind"] == "basic"]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    idx = range(len(rows))
    ax.bar([i - 0.2 for i in idx], [r["cos1"] for r in rows], width=0.4, label="trigger, model only")
    ax.bar([i + 0.2 for i in idx], [r["cos2"] for r in rows], width=0.4, label="trigger, through module")
    if basics:
        ax.plot(list(idx), [r["cos1"] for r in basics], "k.", label="clean image, model only")
    ax.set_xlabel("trigger")
    ax.set_ylabel("similarity (100 cos)")
    s = doc["summary"]
    ax.set_title(f"verified {s['fraction_verified']:.2f}, verdict {s['verdict']}")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def plot_stealth(doc, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    by_type = {}
    for r in doc["rows"]:
        by_type.setdefault(r["noise_type"], []).append(r)
    for name, rows in sorted(by_type.items()):
        marker = "*" if name == "adversarial" else "o"
        size = 120 if name == "adversarial" else 20
        ax.scatter([r["ssim"] for r in rows], [r["similarity"] for r in rows], s=size, marker=marker, label=name)
    ax.set_xlabel("SSIM to clean image")
    ax.set_ylabel("image-caption similarity (100 cos)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_attacks(doc, path):
    sc = doc["scenarios"]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(sc)), [s["success_rate"] for s in sc])
    ax.set_xticks(range(len(sc)))
    ax.set_xticklabels([s["label"] for s in sc], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(doc, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    seeds = sorted({r["seed"] for r in doc["rows"]})
    for seed in seeds:
        rows = sorted((r for r in doc["rows"] if r["seed"] == seed), key=lambda r: r["k"])
        ax.plot([r["k"] for r in rows], [r["similarity"] for r in rows], "o-", label=f"seed {seed}")
    ax.set_xlabel("number of triggers k")
    ax.set_ylabel("post-module similarity (100 cos)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


PLOTTERS = {"verify": plot_verify, "stealth": plot_stealth, "attacks": plot_attacks, "sweep": plot_sweep}


def render_all(reports_dir, figures_dir):
    """Render a figure for every report JSON present; returns ``{name: path}``."""
    out = {}
    for name, fn in PLOTTERS.items():
        src = Path(reports_dir) / f"{name}.json"
        if src.exists():
            out[name] = fn(json.loads(src.read_text(encoding="utf-8")), Path(figures_dir) / f"{name}.png")
    return out
