"""Command-line pipeline driver.

Subcommands: synth, pretrain, adapt, eval, recommend. Configuration resolves
as flags > config file > defaults, and every artifact embeds the resolved
config digest so mismatched corpus/checkpoint pairs are refused. Exit codes:
0 success, 2 usage, 3 data validation, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .adapt import run_adaptation
from .config import RunConfig, config_from_dict, load_config
from .data import load_corpus, make_target_split, read_corpus_digest, write_corpus
from .errors import DataValidationError, NumericError, UsageError
from .metrics import EvalReport, format_report_table, oracle_mode, random_baseline, score_all
from .pretrain import pretrain
from .recommend import format_recommendation_table, recommend
from .synth import export_truth, generate
from .training import predict_rows

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colddiag",
        description="Cross-domain cognitive diagnosis with cold-start adaptation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--corpus", help="corpus directory")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--target-domain", dest="target_domain")
        p.add_argument("--cdm", choices=("irt", "mirt", "neuralcd"))
        p.add_argument("--peer-count", dest="peer_count", type=int)
        p.add_argument("--early-bird-frac", dest="early_bird_fraction", type=float)
        p.add_argument("--lambda-adv", dest="lambda_adv", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--x", dest="recommend_size", type=int)
        p.add_argument("--deterministic", action="store_true", default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    common(p_synth)

    p_pre = sub.add_parser("pretrain", help="decoupled pre-training over source domains")
    common(p_pre)

    p_adapt = sub.add_parser("adapt", help="target-domain adaptation from a checkpoint")
    common(p_adapt)
    p_adapt.add_argument("--checkpoint", required=True)

    p_eval = sub.add_parser("eval", help="score unseen students against baselines")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--no-oracle", action="store_true")

    p_rec = sub.add_parser("recommend", help="question recommendation for one student")
    common(p_rec)
    p_rec.add_argument("--checkpoint", required=True)
    p_rec.add_argument("--student", required=True)
    return parser


_OVERRIDE_FIELDS = (
    "corpus", "out", "seed", "target_domain", "cdm", "peer_count",
    "early_bird_fraction", "lambda_adv", "lr", "batch_size", "recommend_size",
    "deterministic",
)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    for name in _OVERRIDE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "epochs", None) is not None:
        if args.command == "pretrain":
            cfg.epochs_pretrain = args.epochs
        elif args.command == "adapt":
            cfg.epochs_early_bird = args.epochs
            cfg.epochs_cold_start = args.epochs
        else:
            cfg.epochs_pretrain = args.epochs
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg: RunConfig) -> int:
    datasets, truth = generate(cfg.synth, cfg.seed)
    out = _out_dir(cfg)
    write_corpus(datasets, out, digest=cfg.digest())
    export_truth(truth, out / "ground_truth.json")
    load_corpus(out)  # self-check: the generated corpus must validate
    print(f"wrote {len(datasets)} domains to {out}")
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    corpus = load_corpus(cfg.corpus)
    digest = read_corpus_digest(cfg.corpus)
    bundle = pretrain(corpus, cfg, corpus_digest=digest)
    out = _out_dir(cfg)
    ckpt.save_bundle(bundle, out / "checkpoint.json")
    print(f"wrote checkpoint to {out / 'checkpoint.json'}")
    return 0


def _check_digest(bundle_meta: dict, corpus_path: str) -> None:
    recorded = bundle_meta.get("corpus_digest")
    actual = read_corpus_digest(corpus_path)
    if recorded is not None and actual is not None and recorded != actual:
        raise DataValidationError(
            "checkpoint was trained on a different corpus (digest mismatch); "
            "refusing to continue"
        )


def cmd_adapt(cfg: RunConfig, checkpoint_path: str) -> int:
    bundle, _ = ckpt.load_bundle(checkpoint_path)
    _check_digest(bundle.meta, cfg.corpus)
    corpus = load_corpus(cfg.corpus)
    target = next((d for d in corpus if d.domain_id == cfg.target_domain), None)
    if target is None:
        raise DataValidationError(f"target domain {cfg.target_domain!r} not in corpus")
    if target.role != "target":
        raise DataValidationError(f"domain {cfg.target_domain!r} is not marked as target")
    split = make_target_split(target, cfg.early_bird_fraction, cfg.seed)
    result = run_adaptation(bundle, target, split, cfg)
    out = _out_dir(cfg)
    section = ckpt.adapted_section(result.states, split, result.reference_domains)
    ckpt.save_bundle(bundle, out / "checkpoint_adapted.json", adapted=section)
    result.simulated.write_csv(out / "simulated_logs.csv")
    print(
        f"adapted {len(result.states.student_order)} target students; "
        f"{len(result.simulated.logs)} simulated logs "
        f"covering {len(result.simulated.covered_students())} unseen students"
    )
    return 0


def cmd_eval(cfg: RunConfig, checkpoint_path: str, with_oracle: bool = True) -> int:
    bundle, section = ckpt.load_bundle(checkpoint_path)
    if section is None:
        raise DataValidationError("eval needs an adapted checkpoint (run `adapt` first)")
    _check_digest(bundle.meta, cfg.corpus)
    corpus = load_corpus(cfg.corpus)
    target = next((d for d in corpus if d.domain_id == section["domain"]), None)
    if target is None:
        raise DataValidationError(f"target domain {section['domain']!r} not in corpus")
    states, split, _ = ckpt.target_states_from_section(section)

    unseen_logs = [l for l in target.logs if l.student_id in split.unseen_ids]
    if not unseen_logs:
        raise DataValidationError("no held-out unseen-student logs to evaluate")
    table = bundle.embeddings[target.domain_id]
    row_of = {sid: i for i, sid in enumerate(states.student_order)}
    u_rows = np.array([row_of[l.student_id] for l in unseen_logs], dtype=np.int64)
    q_rows = np.array([table.question_index[l.question_id] for l in unseen_logs], dtype=np.int64)
    labels = np.array([float(l.score) for l in unseen_logs])
    preds = predict_rows(bundle.model, table, states.vectors, u_rows, q_rows)

    digest = cfg.digest()
    rows: dict[str, EvalReport] = {
        "pipeline": score_all(preds, labels, cohort="unseen", config_digest=digest),
        "random": random_baseline(unseen_logs, cfg.seed, cohort="unseen", config_digest=digest),
    }
    if with_oracle:
        rows["oracle"] = oracle_mode(target, cfg.cdm, (0.7, 0.1, 0.2), cfg.seed, cfg)

    out = _out_dir(cfg)
    payload = {
        "config_digest": digest,
        "corpus_digest": read_corpus_digest(cfg.corpus),
        "rows": {name: report.to_dict() for name, report in rows.items()},
    }
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, ensure_ascii=False, sort_keys=True, indent=2)
        handle.write("\n")
    text = format_report_table(rows)
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_recommend(cfg: RunConfig, checkpoint_path: str, student_id: str) -> int:
    bundle, section = ckpt.load_bundle(checkpoint_path)
    if section is None:
        raise DataValidationError("recommend needs an adapted checkpoint (run `adapt` first)")
    states, _, _ = ckpt.target_states_from_section(section)
    table = bundle.embeddings[states.domain_id]
    rec = recommend(bundle, states, student_id, table, cfg.recommend_size, cfg.seed)
    out = _out_dir(cfg)
    payload = {
        "student_id": rec.student_id,
        "deficit_filled": rec.deficit_filled,
        "items": rec.to_rows(),
        "config_digest": cfg.digest(),
    }
    with open(out / f"recommend_{student_id}.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, ensure_ascii=False, sort_keys=True, indent=2)
        handle.write("\n")
    text = format_recommendation_table(rec)
    (out / f"recommend_{student_id}.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "adapt":
            return cmd_adapt(cfg, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, with_oracle=not args.no_oracle)
        if args.command == "recommend":
            return cmd_recommend(cfg, args.checkpoint, args.student)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DataValidationError as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


def main_entry() -> None:
    sys.exit(main())
