"""``cfsynth`` command line: sanitize / train / generate / eval / demo-two-sample / accountant.

The data holder runs ``sanitize``; its outputs are everything the other
commands need. ``train`` has no option that names a data file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import Schema, infer_or_load_schema, load_encoded, read_csv, write_synthetic
from .errors import CfSynthError, InvalidArtifact, InvalidData, InvalidParameter
from .evalsuite import evaluate, two_sample_demo
from .gennet import GeneratorNet
from .numcore import Rng
from .privacy import DpBudget, RdpLedger, split_budget, to_eps_delta
from .trainloop import SanitizedRelease, TrainConfig, generate, prepare, train

ARTIFACTS = ("embedding.json", "aux.json", "ledger.json", "schema.json")
DEFAULT_DIMS = (1, 2, 5, 10, 20)


@dataclass(frozen=True)
class PipelineConfig:
    train: TrainConfig
    data_csv: str | None = None
    schema: str | None = None
    label_column: str | None = None
    out_dir: str = "cfsynth_out"

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "data_csv": self.data_csv, "schema": self.schema,
                "label_column": self.label_column, "out_dir": self.out_dir}


# flag name -> TrainConfig field
_TRAIN_FLAGS = {
    "k": "k", "iters": "iterations", "n_gen": "n_gen", "batch": "batch_size",
    "lr_g": "lr_gen", "lr_c": "lr_critic", "seed": "seed",
}


def _read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidParameter(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InvalidParameter(f"{path}: config must be a JSON object")
    return doc


def build_config(args) -> PipelineConfig:
    """Merge defaults, an optional --config file and explicit flags (flags win).

    All validation happens here, before any data is opened.
    """
    doc = _read_config_file(args.config) if getattr(args, "config", None) else {}
    train_doc = dict(doc.get("train", {}))
    known = {f.name for f in fields(TrainConfig)}
    for key in known:
        if key in doc:
            train_doc[key] = doc[key]
    unknown = set(train_doc) - known
    if unknown:
        raise InvalidParameter(f"unknown config keys {sorted(unknown)}")
    budget = {"epsilon": 1.0, "delta": 1e-5, "split": 0.5}
    budget.update(train_doc.pop("budget", None) or doc.get("budget") or {})
    for flag in ("epsilon", "delta", "split"):
        if getattr(args, flag, None) is not None:
            budget[flag] = getattr(args, flag)
    for flag, key in _TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            train_doc[key] = getattr(args, flag)
    if getattr(args, "nonprivate", False):
        train_doc["nonprivate"] = True
    if getattr(args, "critic", None) is not None:
        train_doc["critic_enabled"] = args.critic == "on"
    if getattr(args, "label_hist", False):
        train_doc["label_hist_enabled"] = True
    try:
        train_doc["budget"] = DpBudget(**budget)
        train_cfg = TrainConfig.from_dict(train_doc)
    except TypeError as exc:
        raise InvalidParameter(f"bad config: {exc}") from exc

    out_dir = os.environ.get("PEARL_OUT_DIR") or getattr(args, "out_dir", None) or doc.get("out_dir") or "cfsynth_out"
    return PipelineConfig(
        train=train_cfg,
        data_csv=getattr(args, "data", None) or doc.get("data_csv"),
        schema=getattr(args, "schema", None) or doc.get("schema"),
        label_column=getattr(args, "label", None) or doc.get("label_column"),
        out_dir=str(out_dir),
    )


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _provenance(cfg: PipelineConfig) -> dict:
    echo = cfg.to_dict()
    echo.pop("out_dir")
    return {"config": echo, "tool_version": __version__}


def cmd_sanitize(args) -> int:
    cfg = build_config(args)
    if cfg.data_csv is None:
        raise InvalidParameter("sanitize needs --data")
    out = Path(cfg.out_dir)
    existing = [name for name in ARTIFACTS if (out / name).exists()]
    if existing and not args.force:
        raise InvalidParameter(f"{out} already holds released artifacts {existing}; "
                               "sanitization is one-shot (use --force to overwrite)")
    if not cfg.train.nonprivate:
        # fail on an infeasible budget before the data file is opened
        use_hist = cfg.train.label_hist_enabled and cfg.label_column is not None
        split_budget(cfg.train.budget, n_aux=2 if use_hist else 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if args.quiet else "default")
        schema = infer_or_load_schema(cfg.data_csv, cfg.schema, cfg.label_column)
        data = load_encoded(cfg.data_csv, schema)
    release = prepare(data, schema, cfg.train, Rng(cfg.train.seed))
    del data
    out.mkdir(parents=True, exist_ok=True)
    extra = {**_provenance(cfg), "schema_hash": schema.hash}
    release.save(out, extra)
    schema.save(out / "schema.json")
    print(json.dumps({"out_dir": str(out), "epsilon": _real(release.epsilon),
                      "delta": release.delta, "k": release.freqs.k}))
    return 0


def _real(x):
    return "inf" if x == math.inf else x


def _load_release(art_dir: Path):
    missing = [n for n in ARTIFACTS if not (art_dir / n).exists()]
    if missing:
        raise InvalidArtifact(f"{art_dir} lacks {missing}")
    try:
        release = SanitizedRelease.load(art_dir / "embedding.json", art_dir / "aux.json", art_dir / "ledger.json")
        schema = Schema.load(art_dir / "schema.json")
    except (json.JSONDecodeError, InvalidData) as exc:
        raise InvalidArtifact(f"unreadable artifact: {exc}") from exc
    with open(art_dir / "embedding.json", encoding="utf-8") as fh:
        stored_hash = json.load(fh).get("schema_hash")
    if stored_hash is not None and stored_hash != schema.hash:
        raise InvalidArtifact("schema.json does not match the schema the embedding was built with")
    if release.freqs.dim != schema.d_aug:
        raise InvalidArtifact("frequency dimension does not match the schema")
    return release, schema


def cmd_train(args) -> int:
    cfg = build_config(args)
    art = Path(args.artifacts)
    release, schema = _load_release(art)
    if release.freqs.k != cfg.train.k and args.k is not None:
        raise InvalidParameter(f"--k {args.k} disagrees with the released embedding (k={release.freqs.k})")
    train_cfg = replace(cfg.train, k=release.freqs.k)
    ledger_before = (art / "ledger.json").read_bytes()
    resume = None
    if args.resume:
        with open(args.resume, encoding="utf-8") as fh:
            resume = json.load(fh)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    _, report = train(release, schema, train_cfg, Rng(train_cfg.seed).fork("train"),
                      checkpoint_path=ckpt_path, resume=resume)
    if (art / "ledger.json").read_bytes() != ledger_before:
        raise InvalidArtifact("ledger file changed during training")
    _write_json(out / "report.json", {**report.to_dict(), **_provenance(cfg)})
    print(json.dumps({"checkpoint": str(ckpt_path), "final_cfd": report.cfd[-1] if report.cfd else None,
                      "epsilon": _real(report.epsilon)}))
    return 0


def cmd_generate(args) -> int:
    if args.m < 0:
        raise InvalidParameter("--m must be >= 0")
    try:
        with open(args.checkpoint, encoding="utf-8") as fh:
            net = GeneratorNet.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidArtifact(f"bad checkpoint: {exc}") from exc
    probs = None
    if args.aux:
        with open(args.aux, encoding="utf-8") as fh:
            probs = json.load(fh).get("label_probs")
    records = generate(net, args.m, Rng(args.seed).fork("generate"), probs)
    out = args.out or str(Path(os.environ.get("PEARL_OUT_DIR") or ".") / "synthetic.csv")
    write_synthetic(records, net.schema, out)
    print(json.dumps({"synthetic_csv": out, "rows": len(records)}))
    return 0


def cmd_eval(args) -> int:
    schema = Schema.load(args.schema)
    for path in (args.real, args.synth):
        header, _ = read_csv(path) if os.path.getsize(path) else ([], [])
        if sorted(header) != sorted(schema.names):
            raise InvalidData(f"{path}: columns {header} do not match schema {schema.names}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        real = load_encoded(args.real, schema).features
        synth = load_encoded(args.synth, schema).features
    report = evaluate(real, synth, schema, seed=args.seed, num_queries=args.queries)
    doc = {**report.to_dict(), "real_csv": args.real, "synth_csv": args.synth,
           "schema_hash": schema.hash, "tool_version": __version__}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_demo_two_sample(args) -> int:
    dims = [int(x) for x in args.dims.split(",")] if args.dims else list(DEFAULT_DIMS)
    result = two_sample_demo(dims, n_per_sample=args.n, trials=args.trials, alpha=args.alpha,
                             permutations=args.permutations, rng=Rng(args.seed), shift=args.shift)
    if args.format == "csv":
        text = result.to_csv()
    else:
        text = json.dumps({**result.to_dict(), "seed": args.seed, "tool_version": __version__}, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def accountant_epsilon(ledger_doc: dict, delta: float, conversion: str = "improved"):
    ledger = RdpLedger.from_dict(ledger_doc)
    if not ledger.events:
        return 0.0
    return _real(to_eps_delta(ledger, delta, conversion))


def cmd_accountant(args) -> int:
    try:
        with open(args.ledger, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidArtifact(f"{args.ledger}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InvalidArtifact("ledger must be a JSON object")
    delta = args.delta
    if delta is None:
        delta = (doc.get("converted") or {}).get("delta", 1e-5)
    eps = accountant_epsilon(doc, delta, args.conversion)
    print(json.dumps({"epsilon": eps, "delta": delta, "conversion": args.conversion}))
    return 0


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--split", type=float, help="fraction of epsilon spent on the CF embedding")
    p.add_argument("--k", type=int, help="number of frequencies")
    p.add_argument("--iters", type=int)
    p.add_argument("--n-gen", dest="n_gen", type=int, help="generator steps per critic step")
    p.add_argument("--batch", type=int)
    p.add_argument("--lr-g", dest="lr_g", type=float)
    p.add_argument("--lr-c", dest="lr_c", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--nonprivate", action="store_true", help="noiseless releases (epsilon = inf)")
    p.add_argument("--critic", choices=("on", "off"))
    p.add_argument("--label-hist", action="store_true", help="also release a DP label histogram")
    p.add_argument("--out-dir", dest="out_dir", help="overridden by $PEARL_OUT_DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfsynth", description="DP synthetic data via sanitized CF embeddings")
    parser.add_argument("--version", action="version", version=f"cfsynth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sanitize", help="one-shot private release from a CSV")
    p.add_argument("--data", required=True, help="private CSV")
    p.add_argument("--schema", help="public schema JSON (inferred from the data if omitted)")
    p.add_argument("--label", help="label column for conditional generation")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    p.add_argument("--quiet", action="store_true", help="suppress warnings")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("train", help="train a generator from released artifacts")
    p.add_argument("--artifacts", required=True, help="directory written by sanitize")
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample synthetic records from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--m", type=int, default=11000, help="number of records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--aux", help="aux.json holding released label probabilities")
    p.add_argument("--out", help="output CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="utility metrics of a synthetic CSV against a real one")
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-two-sample", help="CF two-sample test power demo")
    p.add_argument("--dims", help="comma separated dimensions (default 1,2,5,10,20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n", type=int, default=1000, help="samples per side")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--permutations", type=int, default=200)
    p.add_argument("--shift", type=float, default=1.0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_demo_two_sample)

    p = sub.add_parser("accountant", help="convert a ledger to (epsilon, delta)")
    p.add_argument("ledger")
    p.add_argument("--delta", type=float)
    p.add_argument("--conversion", choices=("improved", "standard"), default="improved")
    p.set_defaults(func=cmd_accountant)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except CfSynthError as exc:
        err = {"error": exc.kind, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": "invalid-input", "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
