"""Structured scene metadata, template captions, and the detail filters.

The template grammar is deliberately rigid: groups are joined by "then" /
"followed by", simultaneous events by "while" / "as", repetition counts
become "twice" / "three times" / "four times", loudness becomes "loudly" /
"quietly" (moderate stays silent), the second instance of an
identity-capable category is prefixed "another", and an optional
background is appended as "with ... in the background". The relation
extractor in `metrics` parses exactly this grammar back, which is what the
round-trip fidelity tests lean on.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationError
from .render import Timeline
from .sampler import SceneSpec
from .taxonomy import DetailKind

OCCURRENCE_WORDS = {2: "twice", 3: "three times", 4: "four times"}
LOUDNESS_ADVERBS = {"loud": "loudly", "quiet": "quietly"}

GROUP_CONNECTIVES = ("then", "followed by")
SIMULTANEOUS_CONNECTIVES = ("while", "as")

DETAIL_KEYWORDS: dict[DetailKind, tuple[str, ...]] = {
    DetailKind.OCCURRENCE_NUMBER: ("twice", "three times", "four times"),
    DetailKind.IDENTITY: ("another",),
    DetailKind.LOUDNESS: ("loudly", "quietly", "softly", "loud", "quiet"),
    DetailKind.TEMPORAL_RELATIONSHIP: ("then", "followed by", "after", "before"),
}

_KEYWORD_RES = {
    kind: [re.compile(rf"\b{re.escape(kw)}\b") for kw in kws]
    for kind, kws in DETAIL_KEYWORDS.items()
}


@dataclass
class EventRecord:
    """One event instance as ground truth: what sounded, how often, how
    loud, and when."""

    category: str
    identity_index: int
    surface: str
    occurrence_count: int
    loudness_level: str
    onset_s: float
    offset_s: float

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "identity_index": self.identity_index,
            "surface": self.surface,
            "occurrence_count": self.occurrence_count,
            "loudness_level": self.loudness_level,
            "onset_s": self.onset_s,
            "offset_s": self.offset_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        return cls(
            category=d["category"],
            identity_index=int(d["identity_index"]),
            surface=d["surface"],
            occurrence_count=int(d["occurrence_count"]),
            loudness_level=d["loudness_level"],
            onset_s=float(d["onset_s"]),
            offset_s=float(d["offset_s"]),
        )


@dataclass
class SceneMetadata:
    scene_id: str
    groups: list[list[EventRecord]]
    background_label: str | None = None
    seed: int = 0
    config_hash: str = ""

    def records(self) -> list[EventRecord]:
        return [r for group in self.groups for r in group]

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "groups": [[r.to_dict() for r in group] for group in self.groups],
            "background": self.background_label,
            "provenance": {"seed": self.seed, "config_hash": self.config_hash},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneMetadata":
        prov = d.get("provenance", {})
        return cls(
            scene_id=d["scene_id"],
            groups=[[EventRecord.from_dict(r) for r in group] for group in d["groups"]],
            background_label=d.get("background"),
            seed=int(prov.get("seed", 0)),
            config_hash=prov.get("config_hash", ""),
        )

    @classmethod
    def load(cls, path) -> "SceneMetadata":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataFormatError(f"cannot read metadata {path}: {exc}") from exc


@dataclass
class CaptionCandidate:
    text: str
    origin: str  # "template" or "llm"
    detail_keywords_found: set[DetailKind] = field(default_factory=set)
    similarity_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "origin": self.origin,
            "detail_keywords_found": sorted(k.value for k in self.detail_keywords_found),
            "similarity_score": self.similarity_score,
        }


def another_form(label: str) -> str:
    """Surface form for a repeated identity: 'a man speaks' -> 'another man speaks'."""
    for article in ("a ", "an ", "the "):
        if label.startswith(article):
            return "another " + label[len(article) :]
    return "another " + label


def build_metadata(
    spec: SceneSpec,
    timeline: Timeline,
    scene_id: str = "",
    config_hash: str = "",
    background_label: str | None = None,
) -> SceneMetadata:
    """Project a spec and its resolved timeline into ground-truth records.

    Groups appear in temporal order; identity ordinals are (re)assigned in
    onset order per category, so the earliest instance is "a man" and the
    next one "another man" regardless of how the sampler numbered them.
    """
    rate = spec.sample_rate_hz
    spans: dict[tuple[str, int], list] = {}
    for p in timeline.placements:
        spans.setdefault(p.event_ref[:2], []).append(p)

    entries = []
    for e in spec.events:
        key = (e.category, e.identity_index)
        placed = spans.get(key)
        if placed is None:
            raise ValidationError(f"instance {key} missing from timeline")
        if len(placed) != e.occurrence_count:
            raise ValidationError(
                f"instance {key}: {len(placed)} placements for "
                f"occurrence_count {e.occurrence_count}"
            )
        onset = min(p.onset_sample for p in placed) / rate
        offset = max(p.end_sample for p in placed) / rate
        entries.append((e, onset, offset))
    if len(spans) != len(spec.events):
        raise ValidationError("timeline contains placements not in the spec")

    ordinals: dict[str, int] = {}
    records: dict[int, list[EventRecord]] = {}
    for e, onset, offset in sorted(entries, key=lambda t: (t[1], t[2])):
        ordinal = ordinals.get(e.category, 0)
        ordinals[e.category] = ordinal + 1
        records.setdefault(e.group_index, []).append(
            EventRecord(
                category=e.category,
                identity_index=ordinal,
                surface=e.category if ordinal == 0 else another_form(e.category),
                occurrence_count=e.occurrence_count,
                loudness_level=e.loudness_level,
                onset_s=onset,
                offset_s=offset,
            )
        )

    ordered_groups = [records[g] for g in sorted(records)]
    onsets = [min(r.onset_s for r in group) for group in ordered_groups]
    if onsets != sorted(onsets):
        raise ValidationError("group indices disagree with temporal order")

    return SceneMetadata(
        scene_id=scene_id,
        groups=ordered_groups,
        background_label=background_label if spec.background.present else None,
        seed=spec.seed,
        config_hash=config_hash,
    )


def realize_record(record: EventRecord) -> str:
    """One clause: surface form plus loudness adverb plus count phrase."""
    clause = record.surface
    adverb = LOUDNESS_ADVERBS.get(record.loudness_level)
    if adverb:
        clause += f" {adverb}"
    if record.occurrence_count >= 2:
        clause += f" {OCCURRENCE_WORDS[record.occurrence_count]}"
    return clause


def template_caption(meta: SceneMetadata, seed: int) -> CaptionCandidate:
    """Deterministic caption from metadata under the fixed grammar."""
    rng = np.random.default_rng(seed)
    group_texts = []
    for group in meta.groups:
        clauses = [realize_record(r) for r in group]
        text = clauses[0]
        for clause in clauses[1:]:
            text += f" {SIMULTANEOUS_CONNECTIVES[int(rng.integers(2))]} {clause}"
        group_texts.append(text)
    caption = group_texts[0] if group_texts else ""
    for text in group_texts[1:]:
        caption += f" {GROUP_CONNECTIVES[int(rng.integers(2))]} {text}"
    if meta.background_label:
        caption += f" with {meta.background_label} in the background"
    candidate = CaptionCandidate(text=caption, origin="template")
    candidate.detail_keywords_found = find_detail_keywords(caption)
    return candidate


def find_detail_keywords(text: str) -> set[DetailKind]:
    """Which controlled details the caption surfaces, per the fixed lexicon."""
    lowered = text.lower()
    return {
        kind
        for kind, patterns in _KEYWORD_RES.items()
        if any(p.search(lowered) for p in patterns)
    }


def detail_kinds_in_metadata(meta: SceneMetadata) -> set[DetailKind]:
    """Controlled details actually present in the ground truth."""
    kinds: set[DetailKind] = set()
    for r in meta.records():
        if r.occurrence_count >= 2:
            kinds.add(DetailKind.OCCURRENCE_NUMBER)
        if r.identity_index >= 1:
            kinds.add(DetailKind.IDENTITY)
        if r.loudness_level in LOUDNESS_ADVERBS:
            kinds.add(DetailKind.LOUDNESS)
    if len(meta.groups) >= 2:
        kinds.add(DetailKind.TEMPORAL_RELATIONSHIP)
    return kinds


def keyword_detail_filter(candidate: CaptionCandidate, meta: SceneMetadata) -> bool:
    """True iff every detail present in the metadata is surfaced by a
    lexicon keyword in the caption; detail-free scenes pass vacuously."""
    required = detail_kinds_in_metadata(meta)
    return required <= find_detail_keywords(candidate.text)


def similarity_pair_filter(
    candidates: list[tuple[str, CaptionCandidate]],
    scores: dict[str, float],
    threshold: float,
) -> list[tuple[str, CaptionCandidate]]:
    """Keep (scene_id, candidate) pairs whose external audio-text score
    clears the threshold; unscored pairs are dropped."""
    retained = []
    for scene_id, cand in candidates:
        score = scores.get(scene_id)
        if score is None or score < threshold:
            continue
        cand.similarity_score = score
        retained.append((scene_id, cand))
    return retained


def read_scene_scores(path) -> dict[str, float]:
    """Per-scene similarity scores: `scene_id TAB score`."""
    table: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            sid, _, score = line.partition("\t")
            try:
                table[sid.strip()] = float(score)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return table


_PROMPT_EXAMPLES = [
    (
        '{"groups": [[{"surface": "a cat meows", "occurrence_count": 2}]], "background": null}',
        "a cat meows twice",
    ),
    (
        '{"groups": [[{"surface": "a man speaks"}], [{"surface": "another man speaks"}, '
        '{"surface": "a woman laughs"}]], "background": null}',
        "a man speaks followed by another man speaking while a woman laughs",
    ),
    (
        '{"groups": [[{"surface": "a gun fires", "occurrence_count": 3, '
        '"loudness_level": "loud"}]], "background": "rain falling"}',
        "a gun fires loudly three times with rain falling in the background",
    ),
]


def build_llm_prompt(meta: SceneMetadata) -> str:
    """Instruction prompt asking an external model to phrase the metadata
    as one natural lowercase caption. Byte-stable for identical metadata."""
    required = detail_kinds_in_metadata(meta)
    requirements = [
        "- mention every event exactly once, in the given temporal order",
        "- do not invent any sound, count, loudness or ordering that is not in the metadata",
    ]
    if DetailKind.OCCURRENCE_NUMBER in required:
        counts = sorted(
            OCCURRENCE_WORDS[r.occurrence_count]
            for r in meta.records()
            if r.occurrence_count >= 2
        )
        requirements.append(
            "- state each repetition count with its exact word: " + ", ".join(counts)
        )
    if DetailKind.IDENTITY in required:
        requirements.append('- keep the word "another" for the repeated voice')
    if DetailKind.LOUDNESS in required:
        requirements.append('- keep the loudness adverbs ("loudly", "quietly")')
    if DetailKind.TEMPORAL_RELATIONSHIP in required:
        requirements.append(
            '- order groups with "then" or "followed by"; overlap with "while" or "as"'
        )

    examples = "\n\n".join(
        f"metadata: {m}\ncaption: {c}" for m, c in _PROMPT_EXAMPLES
    )
    return (
        "rewrite the scene metadata below as one short lowercase audio caption.\n"
        "requirements:\n" + "\n".join(requirements) + "\n\n"
        "examples:\n\n" + examples + "\n\n"
        "metadata: " + json.dumps(meta.to_dict(), sort_keys=True) + "\ncaption:"
    )
