"""Command-line orchestration: ingest, run, sweep, synth.

Runs are driven by a JSON config file plus flag overrides; every output
directory gets a manifest.json from which the run can be reproduced
bit-identically. Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusFormatError,
    EmbeddingSet,
    GallerySizeProfile,
    generate_synthetic,
    l2_normalize,
    load_embeddings,
    pca_whiten,
    power_normalize,
    save_embeddings,
)
from .evaluation import (
    DEFAULT_K_GRID,
    DEFAULT_LAMBDA_GRID,
    EvalReport,
    aggregate_reports,
    evaluate_ranking,
    format_report_table,
    relevance_from_labels,
    sweep,
)
from .jaccard import DEFAULT_EPSILON, RerankConfig, jaccard_rerank
from .linear_svm import SvmConfig, esvm_feature_transform
from .query_expansion import qe_rerank
from .ranking import Ranking, cosine_distances, rank

logger = logging.getLogger(__name__)

STRATEGIES = ("cosine", "esvm", "jaccard", "pair", "triple", "aqe")
PREPROCESS_STEPS = ("l2", "power", "whiten")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


class ConfigError(ValueError):
    """Invalid run configuration (maps to exit code 2)."""


@dataclass
class RunConfig:
    """Everything a run needs; serialized verbatim into the manifest."""

    test: str
    train: str | None = None
    preprocess: list[str] = field(default_factory=list)
    whiten_dim: int | None = None
    strategy: str = "cosine"
    base: str = "esvm"
    k: int | None = None
    lambda_value: float | None = None
    epsilon: float = DEFAULT_EPSILON
    svm: dict = field(default_factory=dict)
    seed: int = 0
    repeats: int = 1
    out: str = "out"

    _KEYS = {
        "test", "train", "preprocess", "whiten_dim", "strategy", "base",
        "k", "lambda", "epsilon", "svm", "seed", "repeats", "out",
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - cls._KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "test" not in raw:
            raise ConfigError("config requires a 'test' path")
        kwargs = dict(raw)
        if "lambda" in kwargs:
            kwargs["lambda_value"] = kwargs.pop("lambda")
        return cls(**kwargs)

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for step in self.preprocess:
            if step not in PREPROCESS_STEPS:
                raise ConfigError(f"unknown preprocess step {step!r}")
        if "whiten" in self.preprocess and self.whiten_dim is None:
            raise ConfigError("preprocess step 'whiten' requires whiten_dim")
        if self.strategy == "jaccard":
            if self.k is None or self.lambda_value is None:
                raise ConfigError("strategy 'jaccard' requires k and lambda")
            if self.base not in ("cosine", "esvm"):
                raise ConfigError(f"base must be 'cosine' or 'esvm', got {self.base!r}")
        if self.strategy in ("pair", "triple", "aqe") and self.k is None:
            raise ConfigError(f"strategy {self.strategy!r} requires k")
        needs_train = (
            self.strategy in ("esvm", "pair", "triple", "aqe")
            or (self.strategy == "jaccard" and self.base == "esvm")
            or "whiten" in self.preprocess
        )
        if needs_train and self.train is None:
            raise ConfigError("this strategy/preprocess configuration requires a 'train' path")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "train": self.train,
            "preprocess": list(self.preprocess),
            "whiten_dim": self.whiten_dim,
            "strategy": self.strategy,
            "base": self.base,
            "k": self.k,
            "lambda": self.lambda_value,
            "epsilon": self.epsilon,
            "svm": dict(self.svm),
            "seed": self.seed,
            "repeats": self.repeats,
            "out": self.out,
        }

    def svm_config(self, seed: int) -> SvmConfig:
        return SvmConfig(seed=seed, **self.svm)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    _write_json(
        out_dir / "manifest.json",
        {"tool": "rrkit", "version": __version__, "command": command, "config": config},
    )


def _preprocess(cfg: RunConfig, train: EmbeddingSet | None, test: EmbeddingSet):
    for step in cfg.preprocess:
        if step == "l2":
            test = l2_normalize(test)
            train = l2_normalize(train) if train is not None else None
        elif step == "power":
            test = power_normalize(test)
            train = power_normalize(train) if train is not None else None
        else:  # whiten, fitted on the training split only
            assert train is not None
            test, model = pca_whiten(train, test, cfg.whiten_dim)
            train = model.apply(train)
    return train, test


def _run_once(
    cfg: RunConfig, train: EmbeddingSet | None, test: EmbeddingSet, seed: int, threads: int
) -> Ranking:
    svm_cfg = cfg.svm_config(seed)
    if cfg.strategy == "cosine":
        return rank(cosine_distances(test, test))
    if cfg.strategy == "esvm":
        feats = esvm_feature_transform(test, train, svm_cfg, threads=threads)
        return rank(cosine_distances(feats, feats))
    if cfg.strategy == "jaccard":
        if cfg.base == "cosine":
            dm = cosine_distances(test, test)
        else:
            feats = esvm_feature_transform(test, train, svm_cfg, threads=threads)
            dm = cosine_distances(feats, feats)
        initial = rank(dm)
        return jaccard_rerank(
            initial, dm, RerankConfig(k=cfg.k, lambda_value=cfg.lambda_value, epsilon=cfg.epsilon)
        )
    # pair / triple / aqe
    feats = esvm_feature_transform(test, train, svm_cfg, threads=threads)
    dm = cosine_distances(feats, feats)
    initial = rank(dm)
    return qe_rerank(
        test, train, initial, dm, cfg.k, cfg.strategy, svm_cfg, features=feats, threads=threads
    )


def cmd_run(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = RunConfig.from_dict(raw)
    for key in ("strategy", "k", "seed", "repeats", "out", "base"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if args.lambda_value is not None:
        cfg.lambda_value = args.lambda_value
    cfg.validate()

    test = load_embeddings(cfg.test, split="test")
    train = load_embeddings(cfg.train, split="train") if cfg.train else None
    train, test = _preprocess(cfg, train, test)

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    relevance = relevance_from_labels(test)
    reports: list[EvalReport] = []
    first_ranking: Ranking | None = None
    for r in range(cfg.repeats):
        ranking = _run_once(cfg, train, test, cfg.seed + r, args.threads)
        if first_ranking is None:
            first_ranking = ranking
        reports.append(
            evaluate_ranking(
                ranking,
                relevance,
                method=cfg.strategy,
                config={"seed": cfg.seed + r, "svm": cfg.svm_config(cfg.seed + r).to_dict()},
            )
        )
    report = aggregate_reports(reports) if len(reports) > 1 else reports[0]

    _write_manifest(out_dir, "run", cfg.to_dict())
    first_ranking.to_csv(out_dir / "ranking.csv")
    _write_json(
        out_dir / "ranking.meta.json",
        {
            "strategy": cfg.strategy,
            "base": cfg.base if cfg.strategy == "jaccard" else None,
            "k": cfg.k,
            "lambda": cfg.lambda_value,
            "epsilon": cfg.epsilon,
            "svm": cfg.svm_config(cfg.seed).to_dict(),
            "seed": cfg.seed,
        },
    )
    _write_json(
        out_dir / "report.json",
        {"report": report.to_dict(), "runs": [r.to_dict() for r in reports]},
    )
    (out_dir / "report.txt").write_text(format_report_table([report]) + "\n", encoding="utf-8")
    print(format_report_table([report]))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    known = {"input", "split", "preprocess", "whiten_dim", "train", "base",
             "k_grid", "lambda_grid", "epsilon", "svm", "seed", "out"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
    if "input" not in raw:
        raise ConfigError("sweep config requires an 'input' path")
    out = Path(args.out if args.out is not None else raw.get("out", "sweep_out"))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    base = raw.get("base", "cosine")
    k_grid = [int(k) for k in raw.get("k_grid", DEFAULT_K_GRID)]
    lambda_grid = [float(v) for v in raw.get("lambda_grid", DEFAULT_LAMBDA_GRID)]

    embeddings = load_embeddings(raw["input"], split=raw.get("split", "train"))
    negatives = load_embeddings(raw["train"], split="train") if raw.get("train") else None
    run_cfg = RunConfig(
        test=raw["input"],
        train=raw.get("train"),
        preprocess=list(raw.get("preprocess", [])),
        whiten_dim=raw.get("whiten_dim"),
        svm=dict(raw.get("svm", {})),
        seed=seed,
    )
    negatives, embeddings = _preprocess(run_cfg, negatives, embeddings)

    grid = sweep(
        embeddings,
        k_grid,
        lambda_grid,
        base=base,
        negatives=negatives,
        svm_config=run_cfg.svm_config(seed),
        epsilon=float(raw.get("epsilon", DEFAULT_EPSILON)),
        threads=args.threads,
    )
    if 1.0 in grid.lambda_values:
        column = grid.map_values[:, grid.lambda_values.index(1.0)]
        if not (column == column[0]).all():
            print(
                f"sweep sanity check failed: lambda=1 column not constant: {column.tolist()}",
                file=sys.stderr,
            )
            return EXIT_RUNTIME
    out.mkdir(parents=True, exist_ok=True)
    best_k, best_lambda, best_map = grid.best()
    manifest_cfg = {
        "input": raw["input"],
        "train": raw.get("train"),
        "split": raw.get("split", "train"),
        "preprocess": list(raw.get("preprocess", [])),
        "whiten_dim": raw.get("whiten_dim"),
        "base": base,
        "k_grid": k_grid,
        "lambda_grid": lambda_grid,
        "epsilon": float(raw.get("epsilon", DEFAULT_EPSILON)),
        "svm": dict(raw.get("svm", {})),
        "seed": seed,
        "out": str(out),
    }
    _write_manifest(out, "sweep", manifest_cfg)
    grid.to_csv(out / "sweep.csv")
    _write_json(
        out / "sweep.json",
        {
            "best": {"k": best_k, "lambda": best_lambda, "map": best_map},
            "k_grid": k_grid,
            "lambda_grid": lambda_grid,
            "cells": len(k_grid) * len(lambda_grid),
        },
    )
    print(f"sweep: {len(k_grid) * len(lambda_grid)} cells, "
          f"best k={best_k} lambda={best_lambda} mAP={best_map:.4f}")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    embeddings = load_embeddings(args.input)
    profile = GallerySizeProfile.of(embeddings)
    print(f"{args.input}: {len(embeddings)} samples, dim {embeddings.dim}")
    print(profile.summary())
    if args.to_binary or args.to_csv:
        if args.out is None:
            raise ConfigError("--out is required when converting")
        save_embeddings(embeddings, args.out, "binary" if args.to_binary else "csv")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".csv" if args.format == "csv" else ".bin"
    test = generate_synthetic(
        args.writers, (args.gallery_min, args.gallery_max), args.dim,
        args.spread, args.seed, split="test", writer_prefix="w",
    )
    save_embeddings(test, out / f"test{ext}", args.format)
    written = [f"test{ext}"]
    if args.train_writers > 0:
        train = generate_synthetic(
            args.train_writers, (args.gallery_min, args.gallery_max), args.dim,
            args.spread, args.seed + 1, split="train", writer_prefix="n",
        )
        save_embeddings(train, out / f"train{ext}", args.format)
        written.append(f"train{ext}")
    _write_manifest(
        out,
        "synth",
        {
            "writers": args.writers,
            "train_writers": args.train_writers,
            "gallery_min": args.gallery_min,
            "gallery_max": args.gallery_max,
            "dim": args.dim,
            "spread": args.spread,
            "seed": args.seed,
            "format": args.format,
            "out": str(out),
        },
    )
    print(f"wrote {', '.join(written)} in {out} ({args.writers} writers, dim {args.dim})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rrkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate a corpus file, print a summary, convert formats")
    p_ingest.add_argument("input")
    p_ingest.add_argument("--to-binary", action="store_true")
    p_ingest.add_argument("--to-csv", action="store_true")
    p_ingest.add_argument("--out")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="rank, re-rank, and evaluate per a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--strategy", choices=STRATEGIES)
    p_run.add_argument("--base", choices=("cosine", "esvm"))
    p_run.add_argument("--k", type=int)
    p_run.add_argument("--lambda", dest="lambda_value", type=float)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--repeats", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="(k, lambda) grid sweep per a JSON config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--writers", type=int, required=True)
    p_synth.add_argument("--train-writers", type=int, default=0)
    p_synth.add_argument("--gallery-min", type=int, required=True)
    p_synth.add_argument("--gallery-max", type=int, required=True)
    p_synth.add_argument("--dim", type=int, required=True)
    p_synth.add_argument("--spread", type=float, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--format", choices=("csv", "binary"), default="csv")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
