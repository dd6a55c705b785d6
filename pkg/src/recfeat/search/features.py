"""Feature records and parsing of policy-model output.

Policy models reply either with a JSON object mapping feature names to
definitions or with a numbered/bulleted "Name: definition" list; both
shapes are parsed here. Duplicate names keep the first occurrence
(case-insensitive), so a FeatureSet always has unique names.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace


class FeatureParseError(ValueError):
    """No features could be recognized in the raw text."""


@dataclass(frozen=True)
class Provenance:
    policy_model_id: str = ""
    strategy: str = ""
    step_index: int = 0


@dataclass
class Feature:
    name: str
    definition: str
    valid: bool | None = None
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        if not self.name:
            raise ValueError("feature name must be non-empty")
        if not self.definition:
            raise ValueError("feature definition must be non-empty")

    def text(self) -> str:
        """Canonical one-line form used for embedding and judging."""
        return f"{self.name}: {self.definition}"


@dataclass
class FeatureSet:
    user_id: str
    features: list[Feature]
    raw_text: str
    failed: bool = False

    def valid_features(self) -> list[Feature]:
        return [f for f in self.features if f.valid]

    def to_dict(self) -> dict:
        return {
            "user": self.user_id,
            "failed": self.failed,
            "raw_text": self.raw_text,
            "features": [
                {
                    "name": f.name,
                    "definition": f.definition,
                    "valid": f.valid,
                    "policy_model_id": f.provenance.policy_model_id,
                    "strategy": f.provenance.strategy,
                    "step_index": f.provenance.step_index,
                }
                for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSet":
        features = [
            Feature(
                name=f["name"],
                definition=f["definition"],
                valid=f.get("valid"),
                provenance=Provenance(
                    policy_model_id=f.get("policy_model_id", ""),
                    strategy=f.get("strategy", ""),
                    step_index=f.get("step_index", 0),
                ),
            )
            for f in data["features"]
        ]
        return cls(
            user_id=data["user"],
            features=features,
            raw_text=data.get("raw_text", ""),
            failed=data.get("failed", False),
        )


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)

# Optional list marker (number or bullet), optional bold markers, a short
# name, then a colon and the definition. Long "names" are prose, not
# features, and are rejected by the length bound.
_LINE_RE = re.compile(
    r"^\s*(?:\d+[.)]\s*|[-*•]\s*)?\*{0,2}([^:\n]{1,80}?)\*{0,2}\s*[::]\s*(\S.*?)\s*$"
)


def _strip_fences(raw: str) -> str:
    match = _FENCE_RE.search(raw)
    return match.group(1) if match else raw


def _try_json_object(text: str) -> dict | None:
    for candidate in (text, text[text.find("{") : text.rfind("}") + 1]):
        if not candidate or not candidate.strip().startswith("{"):
            continue
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and obj:
            return obj
    return None


def parse_features(raw: str, user_id: str = "") -> FeatureSet:
    """Parse policy output into a FeatureSet.

    Tries a JSON-object parse first (after stripping code fences), then
    falls back to line-by-line "Name: definition" extraction. Raises
    FeatureParseError when nothing is recognized.
    """
    text = _strip_fences(raw)
    pairs: list[tuple[str, str]] = []

    obj = _try_json_object(text)
    if obj is not None:
        for name, definition in obj.items():
            if not isinstance(definition, str):
                definition = json.dumps(definition)
            if str(name).strip() and definition.strip():
                pairs.append((str(name).strip(), definition.strip()))
    else:
        for line in text.splitlines():
            match = _LINE_RE.match(line)
            if match:
                name = match.group(1).strip().strip("\"'").strip()
                definition = match.group(2).strip()
                if name and definition:
                    pairs.append((name, definition))

    features: list[Feature] = []
    seen: set[str] = set()
    for name, definition in pairs:
        key = name.lower()
        if key in seen:
            continue
        seen.add(key)
        features.append(Feature(name=name, definition=definition))
    if not features:
        raise FeatureParseError("no features recognized in policy output")
    return FeatureSet(user_id=user_id, features=features, raw_text=raw)


def with_provenance(
    features: list[Feature], policy_model_id: str, strategy: str, step_index
) -> list[Feature]:
    """Copies of ``features`` stamped with provenance.

    ``step_index`` is either one integer for all features or a per-feature
    list aligned with them.
    """
    if isinstance(step_index, int):
        steps = [step_index] * len(features)
    else:
        steps = list(step_index)
    return [
        replace(
            f,
            provenance=Provenance(
                policy_model_id=policy_model_id, strategy=strategy, step_index=step
            ),
        )
        for f, step in zip(features, steps)
    ]
