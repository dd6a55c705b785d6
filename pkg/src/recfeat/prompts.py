"""Rendering of the plain-text prompt templates.

Templates live in ``recfeat/templates`` as ``string.Template`` files with
``$name`` placeholders. They are frozen by golden-file tests; changing
one invalidates recorded transcripts, since request digests change.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from string import Template

from .dataset import CandidateSet, ItemCatalog, PreferenceProfile, UserSplit

FEATURES_HEADER = "Validated preference features for this user:"


def _template(name: str) -> Template:
    text = resources.files("recfeat").joinpath("templates", f"{name}.txt").read_text("utf-8")
    return Template(text)


def templates_digest() -> str:
    """SHA-256 over all template files, for run manifests."""
    root = resources.files("recfeat").joinpath("templates")
    h = hashlib.sha256()
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        h.update(entry.name.encode("utf-8"))
        h.update(b"\x00")
        h.update(entry.read_text("utf-8").encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _item_line(item_id: str, rating: int, catalog: ItemCatalog) -> str:
    title, description = catalog.entries[item_id]
    return f"{title}, {description}, {rating}."


def _profile_lines(profile: PreferenceProfile, catalog: ItemCatalog) -> str:
    lines = [_item_line(iid, r, catalog) for iid, r in profile.liked + profile.disliked]
    return "\n".join(lines)


def render_policy_prompt(profile: PreferenceProfile, catalog: ItemCatalog) -> str:
    """Full feature-generation prompt listing every rated item."""
    return _template("policy").substitute(
        user_id=profile.user_id,
        interaction_lines=_profile_lines(profile, catalog),
    )


def render_continuation_prompt(
    profile: PreferenceProfile, catalog: ItemCatalog, existing: list[tuple[str, str]]
) -> str:
    """One-more-feature prompt used by the stepwise strategies."""
    if existing:
        feature_lines = "\n".join(f"- {name}: {definition}" for name, definition in existing)
    else:
        feature_lines = "(none yet)"
    return _template("policy_continue").substitute(
        user_id=profile.user_id,
        interaction_lines=_profile_lines(profile, catalog),
        existing_features=feature_lines,
    )


def render_reward_prompt(
    profile: PreferenceProfile, catalog: ItemCatalog, features: list[tuple[str, str]]
) -> str:
    """Validity-judgment prompt: one boolean per candidate feature."""
    liked = "\n".join(_item_line(iid, r, catalog) for iid, r in profile.liked) or "(none)"
    disliked = "\n".join(_item_line(iid, r, catalog) for iid, r in profile.disliked) or "(none)"
    feature_lines = "\n".join(
        f"{i}. {name}: {definition}" for i, (name, definition) in enumerate(features, start=1)
    )
    return _template("reward").substitute(
        liked_lines=liked, disliked_lines=disliked, feature_lines=feature_lines
    )


def _history_lines(split: UserSplit, catalog: ItemCatalog) -> str:
    return "\n".join(_item_line(i.item_id, i.rating, catalog) for i in split.train)


def _candidate_lines(candidates: CandidateSet, catalog: ItemCatalog) -> str:
    return "\n".join(
        f"{i}. {catalog.title(iid)}" for i, iid in enumerate(candidates.candidates, start=1)
    )


def _features_block(features: list[tuple[str, str]] | None) -> str:
    if not features:
        return ""
    lines = "\n".join(f"- {name}: {definition}" for name, definition in features)
    return f"\n{FEATURES_HEADER}\n\n{lines}\n"


def render_ranking_prompt(
    split: UserSplit,
    candidates: CandidateSet,
    catalog: ItemCatalog,
    features: list[tuple[str, str]] | None = None,
    example: str = "",
) -> str:
    """Listwise ranking prompt; ``example`` prepends a one-shot block."""
    body = _template("rec_rank").substitute(
        history_lines=_history_lines(split, catalog),
        features_block=_features_block(features),
        c=len(candidates.candidates),
        candidate_lines=_candidate_lines(candidates, catalog),
    )
    return example + body


def render_nip_prompt(
    split: UserSplit,
    candidates: CandidateSet,
    catalog: ItemCatalog,
    features: list[tuple[str, str]] | None = None,
) -> str:
    """Single next-item prediction prompt."""
    return _template("rec_nip").substitute(
        history_lines=_history_lines(split, catalog),
        features_block=_features_block(features),
        c=len(candidates.candidates),
        candidate_lines=_candidate_lines(candidates, catalog),
    )


def render_icl_example(
    example_split: UserSplit, example_candidates: CandidateSet, catalog: ItemCatalog
) -> str:
    """One-shot example block: history, candidates, and the answer line."""
    answer_index = example_candidates.candidates.index(example_candidates.ground_truth) + 1
    return _template("rec_icl_example").substitute(
        example_history_lines=_history_lines(example_split, catalog),
        example_candidate_lines=_candidate_lines(example_candidates, catalog),
        example_answer=str(answer_index),
    )


def render_judge_prompt(first: str, second: str) -> str:
    """Pairwise specificity comparison with a forced First/Second choice."""
    return _template("judge").substitute(first=first, second=second)
