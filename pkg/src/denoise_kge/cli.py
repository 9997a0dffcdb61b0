"""Command-line entry points: train, eval, certify, multihop and grid.

Every command resolves its configuration (defaults < YAML file < ``--set``
overrides), prints and stores it before any compute, and finishes by
writing ``manifest.json`` next to its outputs. Exit status is 0 on success,
1 for configuration errors and 2 for failures during the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone

from . import __version__
from .certify import CertConfig, robustness_report
from .config import OUTPUT_ROOT_ENV, ConfigError, dump, load_config, output_dir, train_config
from .evaluation import enumerate_path_queries, link_prediction, multihop_metrics
from .kg import (
    KnowledgeGraph,
    add_reverse_relations,
    build_filter_index,
    chain_kg,
    fingerprint,
    grid_kg,
    load_triples,
    queries_from_split,
    write_triples,
)
from .models import load_checkpoint, save_checkpoint
from .train import sigma_quantile, train

log = logging.getLogger("denoise_kge")

COMMANDS = ("train", "eval", "certify", "multihop", "grid")


class RunError(RuntimeError):
    pass


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.dir = output_dir(cfg, command)
        self.outputs: list[str] = []
        self.start = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.data_fingerprint = None
        os.makedirs(self.dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def add(self, name: str) -> str:
        self.outputs.append(name)
        return self.path(name)

    def write_text(self, name: str, text: str) -> None:
        with open(self.add(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_tsv(self, name: str, header, rows) -> None:
        lines = ["\t".join(header)]
        lines += ["\t".join(_cell(v) for v in row) for row in rows]
        self.write_text(name, "\n".join(lines) + "\n")

    def finish(self) -> None:
        files = []
        for name in self.outputs:
            with open(self.path(name), "rb") as fh:
                files.append({"path": name, "sha256": hashlib.sha256(fh.read()).hexdigest()})
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "dataset_fingerprint": self.data_fingerprint,
            "started": self.started,
            "seconds": round(time.perf_counter() - self.start, 3),
            "outputs": files,
        }
        with open(self.path("manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- data ---------------------------------------------------------------------


def load_graph(cfg: dict, run: Run) -> KnowledgeGraph:
    """Reverse-augmented graph plus its content fingerprint on ``run``.

    Synthetic graphs are written to ``data/`` first so that they are
    fingerprinted exactly like user-supplied triple files.
    """
    if cfg["dataset"] == "files":
        paths = [p for p in (cfg["train_path"], cfg["valid_path"], cfg["test_path"]) if p]
        kg = load_triples(cfg["train_path"], cfg["separator"], cfg["valid_path"], cfg["test_path"])
    else:
        if cfg["dataset"] == "grid":
            kg = grid_kg(cfg["grid_side"], cfg["grid_relations"], seed=cfg["data_seed"])
        else:
            kg = chain_kg(cfg["chain_length"], 2)
        os.makedirs(run.path("data"), exist_ok=True)
        paths = []
        for split in ("train", "valid", "test"):
            name = os.path.join("data", f"{split}.tsv")
            write_triples(kg, split, run.path(name))
            paths.append(run.path(name))
    kg.validate()
    run.data_fingerprint = fingerprint(paths)
    return add_reverse_relations(kg)


def _load_model(cfg: dict, kg: KnowledgeGraph):
    model = load_checkpoint(cfg["checkpoint"])
    if model.family != cfg["family"]:
        raise ConfigError(
            f"checkpoint: family {model.family} does not match config family {cfg['family']}"
        )
    if (model.n_entities, model.n_relations) != (kg.n_entities, kg.n_relations):
        raise ConfigError(
            f"checkpoint: tables ({model.n_entities} entities, {model.n_relations} relations) "
            f"do not match the dataset ({kg.n_entities}, {kg.n_relations})"
        )
    return model


def _queries(cfg: dict, kg: KnowledgeGraph, split: str | None = None):
    qs = queries_from_split(kg, split or cfg["split"])
    if cfg["max_queries"] > 0:
        qs = qs[: cfg["max_queries"]]
    if not qs:
        raise RunError(f"split {split or cfg['split']!r} has no queries")
    return qs


# --- commands -------------------------------------------------------------------


def cmd_train(cfg: dict, run: Run) -> None:
    kg = load_graph(cfg, run)
    model, records = train(kg, train_config(cfg))
    save_checkpoint(model, run.add("checkpoint.npz"))
    run.write_text("train_log.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    if records:
        last = records[-1]
        log.info("epoch %d: L_o=%.4f L_d=%.4f sigma=%.4f", last["epoch"], last["original"],
                 last["denoising"], last["sigma"])


def cmd_eval(cfg: dict, run: Run) -> None:
    kg = load_graph(cfg, run)
    model = _load_model(cfg, kg)
    filt = build_filter_index(kg)
    qs = _queries(cfg, kg)
    blocks = [link_prediction(model, qs, filt)]
    for a in cfg["alphas"]:
        if a > 0:
            blocks.append(link_prediction(model, qs, filt, alpha=a, seed=cfg["seed"]))
    run.write_json("metrics.json", {"split": cfg["split"], "blocks": [b.as_dict() for b in blocks]})
    rows = []
    for b in blocks:
        for metric in ("mrr", "mr", "hits1", "hits3", "hits10"):
            rows.append((b.condition, b.alpha, metric, getattr(b, metric)))
    run.write_tsv("metrics.tsv", ("condition", "alpha", "metric", "value"), rows)
    for b in blocks:
        log.info("%s alpha=%g: MRR=%.4f Hits@10=%.4f", b.condition, b.alpha, b.mrr, b.hits10)


def _certify(cfg, model, kg, split):
    sigma = sigma_quantile(model.entity)
    cert = CertConfig(cfg["n0"], cfg["confidence"], sigma, cfg["seed"], cfg["chunk"])
    return robustness_report(
        model, _queries(cfg, kg, split), cert, cfg["radii"], build_filter_index(kg), cfg["workers"]
    )


def cmd_certify(cfg: dict, run: Run) -> None:
    kg = load_graph(cfg, run)
    model = _load_model(cfg, kg)
    report, records = _certify(cfg, model, kg, cfg["split"])
    run.write_json(
        "certify.json",
        {
            "split": cfg["split"],
            "n0": cfg["n0"],
            "confidence": cfg["confidence"],
            "sigma": report.sigma,
            "n": report.n,
            "acr": report.acr,
            "acr_over_sigma": report.acr_over_sigma,
            "ca": report.ca0,
            "ca_curve": [list(p) for p in report.ca_curve],
            "records": [
                {"head": r.query.head, "relation": r.query.relation, "target": r.query.target,
                 "count": r.count, "p_lower": r.p_lower, "cr": r.cr}
                for r in records
            ],
        },
    )
    run.write_tsv(
        "certify_records.tsv",
        ("query_id", "head", "relation", "target", "count", "p_lower", "cr"),
        [(i, *r.query, r.count, r.p_lower, r.cr) for i, r in enumerate(records)],
    )
    run.write_tsv("ca_curve.tsv", ("radius", "ca"), report.ca_curve)
    log.info("ACR=%.4f ACR/sigma=%.4f CA=%.4f over %d queries", report.acr,
             report.acr_over_sigma, report.ca0, report.n)


def cmd_multihop(cfg: dict, run: Run) -> None:
    kg = load_graph(cfg, run)
    model = _load_model(cfg, kg)
    filt = build_filter_index(kg)
    queries = []
    for h in sorted(set(cfg["hops"])):
        queries += enumerate_path_queries(kg, cfg["split"], h, cfg["path_cap"], cfg["seed"])
    per_hop = multihop_metrics(model, queries, filt, cfg["beam"])
    run.write_json("multihop.json", {f"{h}p": m.as_dict() for h, m in per_hop.items()})
    rows = [(f"{h}p", m.n, m.mrr, m.hits1, m.hits3, m.hits10) for h, m in per_hop.items()]
    run.write_tsv("multihop.tsv", ("query_type", "n", "mrr", "hits1", "hits3", "hits10"), rows)


def cmd_grid(cfg: dict, run: Run) -> None:
    kg = load_graph(cfg, run)
    filt = build_filter_index(kg)
    rows, failures = [], 0
    for alpha in cfg["grid_alphas"]:
        for lam in cfg["grid_lams"]:
            cell = dict(cfg, alpha=alpha, lam=lam)
            try:
                model, _ = train(kg, train_config(cell))
                mrr = link_prediction(model, _queries(cell, kg, "valid"), filt).mrr
                report, _ = _certify(cell, model, kg, "valid")
                rows.append((alpha, lam, mrr, report.acr_over_sigma, "ok"))
            except Exception as exc:  # one failing cell must not abort the grid
                failures += 1
                log.error("cell alpha=%g lam=%g failed: %s", alpha, lam, exc)
                rows.append((alpha, lam, float("nan"), float("nan"), f"error: {exc}"))
            log.info("alpha=%g lam=%g -> %s", alpha, lam, rows[-1][2:])
    run.write_tsv("grid.tsv", ("alpha", "lam", "valid_mrr", "valid_acr_over_sigma", "status"), rows)
    if failures:
        raise RunError(f"{failures} grid cell(s) failed")


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "certify": cmd_certify,
    "multihop": cmd_multihop,
    "grid": cmd_grid,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="denoise-kge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--checkpoint", help="shorthand for --set checkpoint=PATH")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    overrides = list(args.overrides)
    if args.checkpoint:
        overrides.append(f"checkpoint={args.checkpoint}")
    if args.out:
        overrides.append(f"output_dir={args.out}")
    try:
        cfg = load_config(args.config, overrides, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    run = Run(args.command, cfg)
    echo = dump(cfg)
    if not args.quiet:
        print(f"# {args.command} -> {run.dir}\n{echo}", end="")
    run.write_text("config.yaml", echo)
    try:
        HANDLERS[args.command](cfg, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc)
        run.finish()
        return 2
    run.finish()
    return 0


if __name__ == "__main__":
    sys.exit(main())
