"""Report rendering: evaluation tables, growth curves, scatter + fit.

Scores are rendered x100 with two decimals. Every config-dependent
number appears together with the config values that produced it.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import __version__
from .config import RunConfig
from .prompts import templates_digest
from .receval import fit_correlation, relative_improvement
from .runio import load_manifest, read_jsonl

logger = logging.getLogger(__name__)

TASK_ORDER = ("direct_ranking", "in_context_learning", "next_item_prediction")


def fmt_score(value: float | None) -> str:
    return "" if value is None else f"{value * 100:.2f}"


def fmt_improvement(new: float, baseline: float) -> str:
    return f"{relative_improvement(new, baseline):+.2f}%"


def _load_eval(run_dir: Path) -> dict[tuple[str, str], dict]:
    results = {}
    for path in sorted((run_dir / "eval").glob("*.json")):
        rec = read_jsonl(path)[0]
        results[(rec["label"], rec["result"]["task"])] = rec
    return results


def _load_dedup(run_dir: Path) -> dict[str, dict]:
    summaries = {}
    for path in sorted((run_dir / "dedup").glob("*__summary.json")):
        rec = read_jsonl(path)[0]
        summaries[rec["label"]] = rec
    return summaries


def _eval_table_rows(eval_results: dict) -> tuple[list[str], list[list[str]]]:
    header = ["label"]
    for task, prefix in (("direct_ranking", "dr"), ("in_context_learning", "icl")):
        header += [
            f"{prefix}_valid_rate",
            f"{prefix}_ndcg@5",
            f"{prefix}_hit@5",
            f"{prefix}_ndcg@10",
            f"{prefix}_hit@10",
        ]
    header.append("nip_hit")
    labels = sorted({label for label, _ in eval_results})
    rows = []
    for label in labels:
        row = [label]
        for task in ("direct_ranking", "in_context_learning"):
            rec = eval_results.get((label, task))
            if rec is None:
                row += [""] * 5
                continue
            result = rec["result"]
            row += [
                fmt_score(result["valid_rate"]),
                fmt_score(result["ndcg_at"].get("5")),
                fmt_score(result["hit_at"].get("5")),
                fmt_score(result["ndcg_at"].get("10")),
                fmt_score(result["hit_at"].get("10")),
            ]
        nip = eval_results.get((label, "next_item_prediction"))
        row.append(fmt_score(nip["result"]["nip_hit"]) if nip else "")
        rows.append(row)
    return header, rows


def _provenance_lines(config: RunConfig, manifest: dict) -> list[str]:
    backends = config.backends
    lines = [
        f"- tool version: {__version__}",
        f"- templates digest: {templates_digest()}",
        f"- rating threshold (liked >= t): {config.rating_threshold}; "
        f"min history: {config.min_history}",
        f"- eval: C={config.eval.c}, K={list(config.eval.ks)}, "
        f"repeats={config.eval.repeats}, seeds={config.eval.seeds}, "
        f"non-compliant rankings {'excluded from' if config.eval.exclude_noncompliant else 'scored 0 in'} metric averages",
        f"- search: N={config.strategy.n}, M={config.strategy.m}, "
        f"mcts_iterations={config.strategy.mcts_iterations}, "
        f"uct_c={config.strategy.uct_c}, max_features={config.strategy.max_features}, "
        f"rng_seed={config.strategy.rng_seed}",
        f"- dedup: eps={config.dedup.eps}, min_pts={config.dedup.min_pts}, "
        f"metric={config.dedup.metric}",
    ]
    for role in ("policy", "reward", "recommender", "judge", "embedding"):
        b = backends[role]
        lines.append(
            f"- backend {role}: kind={b.kind}, model={b.model_id}, "
            f"temperature={b.temperature}, max_tokens={b.max_tokens} "
            f"(temperatures/token limits are artifact defaults, not reported by the method source)"
        )
    ingest = manifest.get("stages", {}).get("ingest")
    if ingest:
        lines.append(
            f"- ingest: {ingest.get('interactions')} interactions, "
            f"{ingest.get('users_kept')} users kept of {ingest.get('users_total')} "
            f"(min_history={ingest.get('min_history')}), "
            f"{ingest.get('malformed_skipped')} malformed lines skipped"
        )
    return lines


def render_report(config: RunConfig, run_dir: Path) -> list[Path]:
    """Write report.md, eval_table.csv, scatter.csv, and fit.json."""
    manifest = load_manifest(run_dir)
    eval_results = _load_eval(run_dir)
    dedup_summaries = _load_dedup(run_dir)
    report_dir = run_dir / "report"
    outputs: list[Path] = []

    md: list[str] = ["# Run report", "", "## Provenance", ""]
    md += _provenance_lines(config, manifest)

    header, rows = _eval_table_rows(eval_results)
    if rows:
        table_csv = report_dir / "eval_table.csv"
        table_csv.write_text(
            "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n",
            encoding="utf-8",
        )
        outputs.append(table_csv)
        md += ["", "## Evaluation", ""]
        md.append("| " + " | ".join(header) + " |")
        md.append("|" + "---|" * len(header))
        for row in rows:
            md.append("| " + " | ".join(row) + " |")

        baseline = eval_results.get(("none", "direct_ranking"))
        if baseline:
            base_ndcg = baseline["result"]["ndcg_at"].get("10")
            md += ["", "### NDCG@10 improvement over the no-features baseline (DR)", ""]
            for (label, task), rec in sorted(eval_results.items()):
                if task != "direct_ranking" or label == "none":
                    continue
                ndcg = rec["result"]["ndcg_at"].get("10")
                if ndcg is None or base_ndcg in (None, 0):
                    continue
                md.append(
                    f"- {label}: {fmt_score(ndcg)} vs {fmt_score(base_ndcg)} -> "
                    f"{fmt_improvement(ndcg, base_ndcg)}"
                )
    else:
        md += ["", "## Evaluation", "", "not run"]

    md += ["", "## Feature deduplication", ""]
    if dedup_summaries:
        for label, rec in sorted(dedup_summaries.items()):
            md.append(
                f"- {label}: {rec['total_valid']} valid features, "
                f"{rec['unique_count']} unique "
                f"(eps={rec['eps']}, min_pts={rec['min_pts']}, "
                f"embedding={rec['embedding_model']})"
            )
    else:
        md.append("not run")

    # Count-vs-performance scatter over DR NDCG@10.
    points, labels = [], []
    for label, rec in sorted(dedup_summaries.items()):
        eval_rec = eval_results.get((label, "direct_ranking"))
        if eval_rec is None or rec["unique_count"] <= 0:
            continue
        ndcg = eval_rec["result"]["ndcg_at"].get("10")
        if ndcg is None:
            continue
        points.append((float(rec["unique_count"]), float(ndcg)))
        labels.append(label)
    if points:
        scatter = report_dir / "scatter.csv"
        scatter.write_text(
            "\n".join(
                ["model_label,unique_count,ndcg_at_10"]
                + [f"{lab},{int(c)},{m}" for lab, (c, m) in zip(labels, points)]
            )
            + "\n",
            encoding="utf-8",
        )
        outputs.append(scatter)
        md += ["", "## Unique-count vs performance (DR NDCG@10)", ""]
        fit_path = report_dir / "fit.json"
        distinct_counts = {c for c, _ in points}
        if len(points) >= 2 and len(distinct_counts) >= 2:
            fit = fit_correlation(points, labels)
            fit_payload = {
                "slope_per_decade": fit.slope,
                "intercept": fit.intercept,
                "pearson_r": fit.r,
                "points": [
                    {"label": lab, "log10_unique": x, "metric": y}
                    for x, y, lab in fit.points
                ],
            }
            md.append(
                f"- OLS fit on log10(unique count): slope {fit.slope:.4f} per decade, "
                f"intercept {fit.intercept:.4f}, r {fit.r:.4f} ({len(points)} points)"
            )
        else:
            fit_payload = {"note": "not enough distinct points for a fit"}
            md.append("- not enough distinct points for a fit")
        fit_path.write_text(
            json.dumps(fit_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        outputs.append(fit_path)

    md += ["", "## Specificity judging", ""]
    judge_csv = run_dir / "judge" / "report.csv"
    if judge_csv.exists():
        judge_meta = manifest.get("stages", {}).get("judge", {})
        md.append(
            f"Win-tie-lose counts, side A = {judge_meta.get('sets_a', '?')}, "
            f"side B = {judge_meta.get('sets_b', '?')}:"
        )
        md.append("")
        md.append("```")
        md.append(judge_csv.read_text(encoding="utf-8").rstrip())
        md.append("```")
    else:
        md.append("not run")

    report_md = report_dir / "report.md"
    report_md.write_text("\n".join(md) + "\n", encoding="utf-8")
    outputs.append(report_md)
    return outputs
