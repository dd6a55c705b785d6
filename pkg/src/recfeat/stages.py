"""Pipeline stages behind the CLI subcommands.

Every stage is idempotent: a completed stage (manifest marker present,
outputs intact) is skipped, and rerunning never changes output bytes.
The features stage additionally resumes at user granularity from its
own partially written output file.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

from . import dedup as dedup_mod
from .config import RunConfig, build_gateway
from .dataset import (
    ItemCatalog,
    UserSplit,
    build_splits,
    load_catalog,
    load_interactions,
    partition_preferences,
    sample_candidates,
    split_from_dict,
    split_to_dict,
)
from .judge import run_judging
from .receval import (
    IN_CONTEXT_LEARNING,
    NEXT_ITEM_PREDICTION,
    RecTask,
    evaluate,
)
from .rng import SplitMix64, derive_seed
from .runio import (
    UpstreamMissingError,
    dump_json_line,
    init_run_dir,
    mark_stage,
    read_jsonl,
    stage_complete,
    trim_partial_line,
    write_jsonl,
)
from .search.features import FeatureSet
from .search.strategies import SearchSession, run_strategy

logger = logging.getLogger(__name__)


def sanitize_label(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text)


def features_label(strategy: str, model_id: str) -> str:
    return f"{strategy}__{sanitize_label(model_id)}"


def _load_splits(run_dir: Path) -> list[UserSplit]:
    path = run_dir / "splits" / "splits.jsonl"
    if not path.exists():
        raise UpstreamMissingError("ingest stage has not run (splits/splits.jsonl missing)")
    return [split_from_dict(rec) for rec in read_jsonl(path)]


def _feature_files(run_dir: Path) -> list[Path]:
    return sorted((run_dir / "features").glob("*.jsonl"))


def _load_feature_sets(path: Path) -> dict[str, FeatureSet]:
    return {rec["user"]: FeatureSet.from_dict(rec) for rec in read_jsonl(path)}


def run_ingest(config: RunConfig, run_dir: Path) -> bool:
    """Load interactions, build leave-one-out splits, persist them."""
    if stage_complete(run_dir, "ingest"):
        logger.info("ingest already complete; skipped")
        return False
    interactions, skipped = load_interactions(config.interactions_path)
    catalog = load_catalog(config.catalog_path)
    missing = {i.item_id for i in interactions if i.item_id not in catalog}
    if missing:
        raise ValueError(
            f"{len(missing)} interaction item ids missing from the catalog, "
            f"e.g. {sorted(missing)[:3]}"
        )
    splits = build_splits(interactions, config.min_history)
    users_total = len({i.user_id for i in interactions})
    out = run_dir / "splits" / "splits.jsonl"
    write_jsonl(out, [split_to_dict(s) for s in splits])
    mark_stage(
        run_dir,
        "ingest",
        [out],
        extra={
            "interactions": len(interactions),
            "malformed_skipped": skipped,
            "users_total": users_total,
            "users_kept": len(splits),
            "users_dropped": users_total - len(splits),
            "catalog_items": len(catalog),
            "min_history": config.min_history,
        },
    )
    logger.info("ingest: %d interactions, %d users kept", len(interactions), len(splits))
    return True


def build_search_session(config: RunConfig) -> SearchSession:
    policy_cfg = config.backends["policy"]
    reward_cfg = config.backends["reward"]
    return SearchSession(
        policy=build_gateway(config, "policy"),
        reward=build_gateway(config, "reward"),
        policy_model_id=policy_cfg.model_id,
        reward_model_id=reward_cfg.model_id,
        policy_temperature=policy_cfg.temperature,
        reward_temperature=reward_cfg.temperature,
        policy_max_tokens=policy_cfg.max_tokens,
        reward_max_tokens=reward_cfg.max_tokens,
    )


def run_features(
    config: RunConfig,
    run_dir: Path,
    strategy: str,
    session: SearchSession | None = None,
) -> bool:
    """Generate one FeatureSet per user; resumable at user granularity.

    Users already present in the output file are left untouched, so an
    interrupted run reruns to the identical bytes of an uninterrupted
    one.
    """
    if session is None:
        session = build_search_session(config)
    label = features_label(strategy, session.policy_model_id)
    stage = f"features:{label}"
    if stage_complete(run_dir, stage):
        logger.info("features %s already complete; skipped", label)
        return False
    splits = _load_splits(run_dir)
    catalog = load_catalog(config.catalog_path)
    out = run_dir / "features" / f"{label}.jsonl"
    trim_partial_line(out)
    done = {rec["user"] for rec in read_jsonl(out)} if out.exists() else set()
    with out.open("a", encoding="utf-8") as fh:
        for split in splits:
            if split.user_id in done:
                continue
            profile = partition_preferences(split, config.rating_threshold)
            feature_set = run_strategy(session, profile, catalog, config.strategy, strategy)
            fh.write(dump_json_line(feature_set.to_dict()))
            fh.flush()
    mark_stage(
        run_dir,
        stage,
        [out],
        extra={
            "strategy": strategy,
            "policy_model_id": session.policy_model_id,
            "users": len(splits),
        },
    )
    logger.info("features %s: %d users", label, len(splits))
    return True


def run_dedup(config: RunConfig, run_dir: Path) -> bool:
    """Embed and cluster the valid features of every features file."""
    if stage_complete(run_dir, "dedup"):
        logger.info("dedup already complete; skipped")
        return False
    files = _feature_files(run_dir)
    if not files:
        raise UpstreamMissingError("features stage has not run (no features/*.jsonl)")
    gateway = build_gateway(config, "embedding")
    model_id = config.backends["embedding"].model_id
    outputs = []
    for path in files:
        label = path.stem
        sets = _load_feature_sets(path)
        features = [f for user in sorted(sets) for f in sets[user].valid_features()]
        embedded = dedup_mod.embed_features(features, gateway, model_id)
        report = dedup_mod.dedup_report(embedded, config.dedup)
        summary = run_dir / "dedup" / f"{label}__summary.json"
        write_jsonl(
            summary,
            [
                {
                    "label": label,
                    "total_valid": report.total_valid,
                    "unique_count": report.unique_count,
                    "eps": config.dedup.eps,
                    "min_pts": config.dedup.min_pts,
                    "embedding_model": model_id,
                }
            ],
        )
        growth = run_dir / "dedup" / f"{label}__growth.csv"
        lines = ["total,unique"] + [f"{t},{u}" for t, u in report.growth]
        growth.write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.extend([summary, growth])
        logger.info(
            "dedup %s: %d valid, %d unique", label, report.total_valid, report.unique_count
        )
    mark_stage(run_dir, "dedup", outputs)
    return True


def _icl_example(
    config: RunConfig, splits: list[UserSplit], catalog: ItemCatalog
) -> tuple[UserSplit, "object"]:
    rng = SplitMix64(derive_seed(config.eval.example_seed, "icl_example"))
    example_split = splits[rng.next_below(len(splits))]
    candidates = sample_candidates(
        example_split,
        catalog,
        config.eval.c,
        derive_seed(config.eval.example_seed, "icl_example_candidates"),
    )
    return example_split, candidates


def run_eval(config: RunConfig, run_dir: Path) -> bool:
    """Evaluate every features file plus the no-features baseline."""
    if stage_complete(run_dir, "eval"):
        logger.info("eval already complete; skipped")
        return False
    splits = _load_splits(run_dir)
    files = _feature_files(run_dir)
    if not files:
        raise UpstreamMissingError("features stage has not run (no features/*.jsonl)")
    catalog = load_catalog(config.catalog_path)
    gateway = build_gateway(config, "recommender")
    rec_cfg = config.backends["recommender"]

    example = None
    eval_users = splits
    if IN_CONTEXT_LEARNING in config.eval.tasks:
        example_split, example_candidates = _icl_example(config, splits, catalog)
        example = (example_split, example_candidates)
        # The one-shot user is held out of every task's evaluation pool
        # so all tasks cover the same users.
        eval_users = [s for s in splits if s.user_id != example_split.user_id]
    if not eval_users:
        raise ValueError("no users left to evaluate after holding out the ICL example")

    runs: list[tuple[str, dict | None]] = []
    for path in files:
        sets = _load_feature_sets(path)
        runs.append((path.stem, {u: fs.valid_features() for u, fs in sets.items()}))
    if config.eval.include_baseline:
        runs.append(("none", None))

    outputs = []
    for label, features_by_user in runs:
        for task_kind in config.eval.tasks:
            task = RecTask(
                kind=task_kind,
                one_shot_example=example if task_kind == IN_CONTEXT_LEARNING else None,
            )
            result = evaluate(
                eval_users,
                catalog,
                task,
                gateway,
                rec_cfg.model_id,
                features_by_user=features_by_user,
                repeats=config.eval.repeats,
                seeds=list(config.eval.seeds),
                c=config.eval.c,
                ks=config.eval.ks,
                temperature=rec_cfg.temperature,
                max_tokens=rec_cfg.max_tokens,
                exclude_noncompliant=config.eval.exclude_noncompliant,
            )
            out = run_dir / "eval" / f"{label}__{task_kind}.json"
            write_jsonl(
                out,
                [
                    {
                        "label": label,
                        "recommender_model": rec_cfg.model_id,
                        "temperature": rec_cfg.temperature,
                        "c": config.eval.c,
                        "seeds": list(config.eval.seeds),
                        "users": len(eval_users),
                        "exclude_noncompliant": config.eval.exclude_noncompliant,
                        "result": result.to_dict(),
                    }
                ],
            )
            outputs.append(out)
            logger.info("eval %s/%s done", label, task_kind)
    mark_stage(run_dir, "eval", outputs)
    return True


def run_judge(config: RunConfig, run_dir: Path) -> bool:
    """Pairwise specificity judging between two feature files."""
    if stage_complete(run_dir, "judge"):
        logger.info("judge already complete; skipped")
        return False
    settings = config.judge
    if not settings.judges or not settings.sets_a or not settings.sets_b:
        raise UpstreamMissingError(
            "judge stage needs judge.judges, judge.sets_a, and judge.sets_b in the config"
        )
    path_a = run_dir / "features" / f"{settings.sets_a}.jsonl"
    path_b = run_dir / "features" / f"{settings.sets_b}.jsonl"
    for path in (path_a, path_b):
        if not path.exists():
            raise UpstreamMissingError(f"features file missing: {path.name}")
    gateway = build_gateway(config, "judge")
    audit: list[dict] = []
    reports = run_judging(
        _load_feature_sets(path_a),
        _load_feature_sets(path_b),
        settings.judges,
        gateway,
        pairing_seed=settings.pairing_seed,
        sample_size=settings.sample_size,
        audit=audit,
    )
    csv_path = run_dir / "judge" / "report.csv"
    rows = ["judge,wins_a,ties,wins_b,skipped"] + [
        f"{r.judge_model_id},{r.wins_a},{r.ties},{r.wins_b},{r.skipped}" for r in reports
    ]
    csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    audit_path = run_dir / "judge" / "audit.jsonl"
    write_jsonl(audit_path, audit)
    mark_stage(
        run_dir,
        "judge",
        [csv_path, audit_path],
        extra={"sets_a": settings.sets_a, "sets_b": settings.sets_b},
    )
    return True


def run_report(config: RunConfig, run_dir: Path) -> bool:
    """Render the markdown report and CSV artifacts."""
    from .report import render_report  # local import to keep stages light

    if stage_complete(run_dir, "report"):
        logger.info("report already complete; skipped")
        return False
    if not stage_complete(run_dir, "ingest"):
        raise UpstreamMissingError("ingest stage has not run")
    outputs = render_report(config, run_dir)
    mark_stage(run_dir, "report", outputs)
    return True


__all__ = [
    "UpstreamMissingError",
    "build_search_session",
    "features_label",
    "init_run_dir",
    "run_dedup",
    "run_eval",
    "run_features",
    "run_ingest",
    "run_judge",
    "run_report",
    "sanitize_label",
]
