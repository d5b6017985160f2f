"""Command-line entry point: ``trigmark <command> [options]``.

Commands, in pipeline order::

    init-config      write the default configuration file
    gen-corpus       render the synthetic corpus
    train-encoder    train the owner's toy dual encoder
    gen-triggers     generate the owner's adversarial trigger set
    train-transform  train the owner's transform module
    verify           two-phase verification report and verdict
    stealth-eval     fidelity / similarity matrix over noise configurations
    attack-sim       forgery and substitution scenarios
    sweep            trigger-count trade-off over several seeds
    report           render figures from existing reports
    export-embeddings  dump encoder embeddings as a text table

The artifact root is ``--out``, else ``$TRIGMARK_HOME``, else ``./artifacts``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline as P
from .config import ConfigError, build, default_config, dump_config, load_config
from .plots import render_all
from .stealth import stealth_checks, stealth_table


def _common(parser):
    parser.add_argument("--config", type=Path, help="JSON config file (default: built-in defaults)")
    parser.add_argument("--seed", type=int, help="override every seed in the config")
    parser.add_argument("--out", type=Path, help="artifact root directory")
    parser.add_argument("--format", choices=("table", "machine"), default="table", help="stdout format")


def make_parser():
    parser = argparse.ArgumentParser(prog="trigmark", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("init-config", help="write the default config")
    p.add_argument("path", type=Path)
    for name, text in (
        ("gen-corpus", "render the synthetic corpus"),
        ("train-encoder", "train the owner's toy dual encoder"),
        ("gen-triggers", "generate the owner's trigger set"),
        ("train-transform", "train the owner's transform module"),
        ("stealth-eval", "fidelity versus similarity matrix"),
        ("attack-sim", "forgery and substitution scenarios"),
        ("sweep", "trigger-count trade-off"),
        ("report", "render figures from existing reports"),
    ):
        _common(sub.add_parser(name, help=text))
    p = sub.add_parser("verify", help="two-phase verification")
    _common(p)
    p.add_argument("--model", type=Path, help="suspicious model checkpoint (default: owner's encoder)")
    p.add_argument("--module", type=Path, help="transform module checkpoint (default: owner's module)")
    p = sub.add_parser("export-embeddings", help="dump corpus embeddings of the owner's encoder")
    _common(p)
    p.add_argument("path", type=Path)
    return parser


def _emit(args, table, machine):
    sys.stdout.write(table if args.format == "table" else machine)


def _machine(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def run(args):
    if args.command == "init-config":
        args.path.parent.mkdir(parents=True, exist_ok=True)
        args.path.write_text(dump_config(default_config()), encoding="utf-8")
        print(f"wrote {args.path}")
        return 0
    cfg = load_config(args.config, args.seed)
    p = build(cfg)
    layout = P.Layout(args.out)
    cmd = args.command

    if cmd == "gen-corpus":
        corpus = P.gen_corpus(p, layout)
        info = {"pairs": len(corpus), "path": str(layout.corpus_dir(p.corpus.name))}
        _emit(args, f"wrote {info['pairs']} pairs to {info['path']}\n", _machine(info))
    elif cmd == "train-encoder":
        model = P.train_encoder(p, layout)
        info = {"model_id": model.model_id, "path": str(layout.encoder_path(model.model_id)), **model.metadata}
        _emit(args, f"trained {model.model_id}: held-out top-1 {model.metadata['holdout_top1']:.4f}\n", _machine(info))
    elif cmd == "gen-triggers":
        tset = P.gen_triggers(p, layout)
        info = {"accepted": len(tset.accepted), "rejected": len(tset.rejected),
                "path": str(layout.triggers_dir(tset.model_id))}
        _emit(args, f"accepted {info['accepted']} triggers ({info['rejected']} rejected) -> {info['path']}\n",
              _machine(info))
    elif cmd == "train-transform":
        module = P.train_module(p, layout)
        info = {"module_id": module.module_id, "converged": module.converged, **module.metadata}
        _emit(args, f"trained {module.module_id}: converged {module.converged}, "
                    f"alignment {module.metadata['alignment_rate']:.4f}\n", _machine(info))
    elif cmd == "verify":
        report = P.verify(p, layout, args.model, args.module)
        _emit(args, report.to_table(), report.to_machine())
    elif cmd == "stealth-eval":
        rows = P.stealth_eval(p, layout)
        checks = stealth_checks(rows)
        _emit(args, stealth_table(rows), (layout.reports / "stealth.json").read_text(encoding="utf-8"))
        if args.format == "table":
            print(f"\nchecks: {checks}")
    elif cmd == "attack-sim":
        P.attack_sim(p, layout)
        _emit(args, (layout.reports / "attacks.tsv").read_text(encoding="utf-8"),
              (layout.reports / "attacks.json").read_text(encoding="utf-8"))
    elif cmd == "sweep":
        P.sweep(p, layout)
        _emit(args, (layout.reports / "sweep.tsv").read_text(encoding="utf-8"),
              (layout.reports / "sweep.json").read_text(encoding="utf-8"))
    elif cmd == "report":
        figures = render_all(layout.reports, layout.figures)
        if not figures:
            raise P.MissingArtifact(f"missing reports: no *.json under {layout.reports}")
        summary = {}
        for name in figures:
            doc = json.loads((layout.reports / f"{name}.json").read_text(encoding="utf-8"))
            if name == "verify":
                summary["verify"] = doc["summary"]
            elif name == "attacks":
                summary["attacks"] = {s["label"]: s["success_rate"] for s in doc["scenarios"]}
                if "forgery_failure_rate" in doc:
                    summary["attacks"]["forgery_failure_rate"] = doc["forgery_failure_rate"]
            elif name == "stealth":
                summary["stealth"] = doc["checks"]
            elif name == "sweep":
                summary["sweep"] = {f"seed{r['seed']}/k{r['k']}": r["similarity"] for r in doc["rows"]}
        summary["figures"] = {k: str(v) for k, v in figures.items()}
        lines = ["section\tkey\tvalue"]
        for section, body in summary.items():
            for key, value in body.items():
                lines.append(f"{section}\t{key}\t{value}")
        _emit(args, "\n".join(lines) + "\n", _machine(summary))
    elif cmd == "export-embeddings":
        n = P.export_embeddings(p, layout, args.path)
        _emit(args, f"wrote {n} embeddings to {args.path}\n", _machine({"rows": n, "path": str(args.path)}))
    return 0


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"trigmark {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
