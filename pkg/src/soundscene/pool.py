"""Curation of the single-event clip pool.

Candidate clips pass three stages, in order: a duration filter, an
activity filter that drops or splits clips with too much non-target
content (activity spans come from an external detector, read from a
sidecar file), and a similarity filter over externally computed
audio-text agreement scores. Short-event categories skip the activity
stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DataFormatError, ValidationError
from .taxonomy import Taxonomy


@dataclass
class SourceClip:
    """One curated single-event recording.

    `source_span_s` is set on clips derived by segment splitting and gives
    the (onset, offset) window into the original audio file; `activity_segments`
    are always expressed in the clip's own timebase.
    """

    id: str
    audio_path: str
    category: str
    duration_s: float
    sample_rate_hz: int
    activity_segments: list[tuple[float, float]] = field(default_factory=list)
    similarity_score: float | None = None
    source_span_s: tuple[float, float] | None = None

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ValidationError(f"clip {self.id}: duration must be positive")
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"clip {self.id}: sample rate must be positive")
        last = 0.0
        for onset, offset in self.activity_segments:
            if not (0.0 <= onset < offset <= self.duration_s + 1e-9):
                raise ValidationError(
                    f"clip {self.id}: bad activity segment ({onset}, {offset})"
                )
            if onset < last:
                raise ValidationError(
                    f"clip {self.id}: activity segments must be sorted and disjoint"
                )
            last = offset

    def active_duration_s(self) -> float:
        return sum(off - on for on, off in self.activity_segments)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "audio_path": self.audio_path,
            "category": self.category,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "activity_segments": [list(seg) for seg in self.activity_segments],
            "similarity_score": self.similarity_score,
            "source_span_s": list(self.source_span_s) if self.source_span_s else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceClip":
        clip = cls(
            id=d["id"],
            audio_path=d["audio_path"],
            category=d["category"],
            duration_s=float(d["duration_s"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            activity_segments=[tuple(s) for s in d.get("activity_segments", [])],
            similarity_score=d.get("similarity_score"),
            source_span_s=tuple(d["source_span_s"]) if d.get("source_span_s") else None,
        )
        clip.validate()
        return clip


@dataclass
class PoolManifest:
    clips: list[SourceClip]
    per_category_counts: dict[str, int]

    def by_category(self) -> dict[str, list[SourceClip]]:
        out: dict[str, list[SourceClip]] = {}
        for clip in self.clips:
            out.setdefault(clip.category, []).append(clip)
        for clips in out.values():
            clips.sort(key=lambda c: c.id)
        return out

    def get(self, clip_id: str) -> SourceClip:
        for clip in self.clips:
            if clip.id == clip_id:
                return clip
        raise ValidationError(f"unknown clip id {clip_id!r}")

    def to_dict(self) -> dict:
        return {
            "clips": [c.to_dict() for c in self.clips],
            "per_category_counts": dict(sorted(self.per_category_counts.items())),
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "PoolManifest":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read manifest {path}: {exc}") from exc
        return cls(
            clips=[SourceClip.from_dict(c) for c in doc["clips"]],
            per_category_counts=doc["per_category_counts"],
        )


def read_clip_table(path) -> list[SourceClip]:
    """Read the candidate clip table: id, path, category, duration,
    sample_rate — tab-separated, one clip per line."""
    clips = []
    base = Path(path).parent
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataFormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
            cid, rel, category, dur, rate = parts
            try:
                clip = SourceClip(
                    id=cid.strip(),
                    audio_path=str((base / rel.strip())),
                    category=category.strip().lower(),
                    duration_s=float(dur),
                    sample_rate_hz=int(rate),
                )
                clip.validate()
            except (ValueError, ValidationError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            clips.append(clip)
    return clips


def read_activity_sidecar(path) -> dict[str, list[tuple[float, float]]]:
    """Activity spans per clip id: `id TAB onset-offset [onset-offset ...]`."""
    table: dict[str, list[tuple[float, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cid, _, rest = line.partition("\t")
            segments = []
            for token in rest.split():
                onset, sep, offset = token.partition("-")
                if not sep:
                    raise DataFormatError(f"{path}:{lineno}: bad segment {token!r}")
                try:
                    segments.append((float(onset), float(offset)))
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            table[cid.strip()] = sorted(segments)
    return table


def read_similarity_sidecar(path) -> dict[str, float]:
    """Similarity scores per clip id: `id TAB score`."""
    table: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cid, _, score = line.partition("\t")
            try:
                table[cid.strip()] = float(score)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return table


def filter_by_duration(
    clips: list[SourceClip], min_s: float, max_s: float
) -> list[SourceClip]:
    """Keep clips with min_s <= duration <= max_s."""
    if not min_s < max_s:
        raise ValueError("min_s must be smaller than max_s")
    return [c for c in clips if min_s <= c.duration_s <= max_s]


def apply_activity_filter(
    clip: SourceClip, max_nontarget_ratio: float, min_segment_s: float
) -> list[SourceClip]:
    """Pass, split, or drop one clip based on its activity spans.

    If the non-target fraction is within the ratio the clip passes
    unchanged. Otherwise one derived clip is made per activity segment of
    at least min_segment_s, trimmed exactly to the segment; an empty list
    means nothing qualified.
    """
    nontarget = clip.duration_s - clip.active_duration_s()
    if nontarget / clip.duration_s <= max_nontarget_ratio + 1e-12:
        return [clip]
    derived = []
    for i, (onset, offset) in enumerate(clip.activity_segments):
        length = offset - onset
        if length < min_segment_s:
            continue
        base_on = clip.source_span_s[0] if clip.source_span_s else 0.0
        derived.append(
            replace(
                clip,
                id=f"{clip.id}_seg{i}",
                duration_s=length,
                activity_segments=[(0.0, length)],
                source_span_s=(base_on + onset, base_on + offset),
            )
        )
    return derived


def apply_similarity_filter(
    clips: list[SourceClip], threshold: float
) -> list[SourceClip]:
    """Keep clips whose similarity score is present and >= threshold."""
    return [
        c for c in clips if c.similarity_score is not None and c.similarity_score >= threshold
    ]


def build_manifest(clips: list[SourceClip], taxonomy: Taxonomy) -> PoolManifest:
    """Assemble the manifest; every clip category must exist in the taxonomy."""
    unknown = sorted({c.category for c in clips if c.category not in taxonomy})
    if unknown:
        raise ValidationError(f"categories missing from taxonomy: {', '.join(unknown)}")
    ordered = sorted(clips, key=lambda c: c.id)
    counts: dict[str, int] = {}
    for clip in ordered:
        counts[clip.category] = counts.get(clip.category, 0) + 1
    return PoolManifest(clips=ordered, per_category_counts=counts)


def curate(
    clips: list[SourceClip],
    taxonomy: Taxonomy,
    min_duration_s: float = 0.5,
    max_duration_s: float = 30.0,
    max_nontarget_ratio: float = 0.3,
    min_segment_s: float = 1.0,
    similarity_threshold: float = 0.3,
    similarity: dict[str, float] | None = None,
    activity: dict[str, list[tuple[float, float]]] | None = None,
    skip_activity: bool = False,
) -> tuple[PoolManifest, dict[str, int]]:
    """Run the full three-stage curation and report per-stage drop counts.

    Activity spans and similarity scores may be supplied from sidecars;
    clips without activity data are skipped at the activity stage (not an
    error) unless their category is a short event, which bypasses that
    stage entirely.
    """
    counts = {"input": len(clips)}

    stage1 = filter_by_duration(clips, min_duration_s, max_duration_s)
    counts["dropped_duration"] = len(clips) - len(stage1)

    stage2: list[SourceClip] = []
    skipped_missing_activity = 0
    for clip in stage1:
        if activity is not None and clip.id in activity and not clip.activity_segments:
            clip = replace(clip, activity_segments=activity[clip.id])
        if skip_activity or taxonomy.get(clip.category).is_short_event:
            stage2.append(clip)
            continue
        if not clip.activity_segments:
            skipped_missing_activity += 1
            continue
        clip.validate()
        stage2.extend(apply_activity_filter(clip, max_nontarget_ratio, min_segment_s))
    counts["skipped_missing_activity"] = skipped_missing_activity
    counts["after_activity"] = len(stage2)

    if similarity is not None:
        # Split clips inherit their parent's score unless scored directly.
        def score_for(c: SourceClip):
            root = c.id.split("_seg")[0]
            return similarity.get(c.id, similarity.get(root, c.similarity_score))

        stage2 = [replace(c, similarity_score=score_for(c)) for c in stage2]
    stage3 = apply_similarity_filter(stage2, similarity_threshold)
    counts["dropped_similarity"] = len(stage2) - len(stage3)
    counts["retained"] = len(stage3)

    return build_manifest(stage3, taxonomy), counts
