"""Seeded sampling of renderable scene specifications.

A scene is a list of event instances (category, clips, occurrence count,
loudness, identity ordinal) partitioned into overlap groups that play out
sequentially, plus an optional background bed at a target SNR. Sampling
is a pure function of (pool, taxonomy, config, seed): infeasible draws
are rejected and redrawn from the same stream, so results stay
deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import DataFormatError, InfeasibleError
from .pool import PoolManifest
from .taxonomy import DetailKind, Taxonomy

LOUDNESS_LEVELS = ("loud", "moderate", "quiet")

# Layout ranges shared by feasibility checks and the renderer's placement.
INTER_GROUP_GAP_RANGE_S = (0.2, 1.0)
INTRA_OCCURRENCE_GAP_RANGE_S = (0.3, 1.5)
GROUP_START_JITTER_MAX_S = 0.5

_MAX_SAMPLE_ATTEMPTS = 100


@dataclass
class EventInstanceSpec:
    category: str
    clip_ids: list[str]
    occurrence_count: int
    identity_index: int
    loudness_level: str
    group_index: int

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "clip_ids": list(self.clip_ids),
            "occurrence_count": self.occurrence_count,
            "identity_index": self.identity_index,
            "loudness_level": self.loudness_level,
            "group_index": self.group_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventInstanceSpec":
        return cls(
            category=d["category"],
            clip_ids=list(d["clip_ids"]),
            occurrence_count=int(d["occurrence_count"]),
            identity_index=int(d["identity_index"]),
            loudness_level=d["loudness_level"],
            group_index=int(d["group_index"]),
        )


@dataclass
class BackgroundSpec:
    present: bool
    clip_id: str | None = None
    snr_db: float | None = None

    def to_dict(self) -> dict:
        return {"present": self.present, "clip_id": self.clip_id, "snr_db": self.snr_db}

    @classmethod
    def from_dict(cls, d: dict) -> "BackgroundSpec":
        return cls(present=bool(d["present"]), clip_id=d.get("clip_id"), snr_db=d.get("snr_db"))


@dataclass
class SceneSpec:
    seed: int
    target_duration_s: float
    sample_rate_hz: int
    events: list[EventInstanceSpec]
    background: BackgroundSpec = field(default_factory=lambda: BackgroundSpec(False))

    def n_groups(self) -> int:
        return max(e.group_index for e in self.events) + 1 if self.events else 0

    def groups(self) -> list[list[EventInstanceSpec]]:
        out: list[list[EventInstanceSpec]] = [[] for _ in range(self.n_groups())]
        for e in self.events:
            out[e.group_index].append(e)
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "target_duration_s": self.target_duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "events": [e.to_dict() for e in self.events],
            "background": self.background.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            seed=int(d["seed"]),
            target_duration_s=float(d["target_duration_s"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            events=[EventInstanceSpec.from_dict(e) for e in d["events"]],
            background=BackgroundSpec.from_dict(d["background"]),
        )

    @classmethod
    def load(cls, path) -> "SceneSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataFormatError(f"cannot read scene spec {path}: {exc}") from exc


def instance_min_duration_s(clip_durations: list[float], occurrence_count: int) -> float:
    """Tightest possible span of one instance: clips back to back with
    minimum repetition gaps."""
    return sum(clip_durations) + (occurrence_count - 1) * INTRA_OCCURRENCE_GAP_RANGE_S[0]


def scene_min_duration_s(spec: SceneSpec, durations: dict[str, float]) -> float:
    """Tightest possible scene span: per group the longest member, groups
    separated by minimum gaps."""
    group_spans = []
    for group in spec.groups():
        spans = [
            instance_min_duration_s([durations[c] for c in e.clip_ids], e.occurrence_count)
            for e in group
        ]
        group_spans.append(max(spans))
    gaps = (len(group_spans) - 1) * INTER_GROUP_GAP_RANGE_S[0]
    return sum(group_spans) + gaps


def sample_scene(
    pool: PoolManifest, taxonomy: Taxonomy, config: PipelineConfig, seed: int
) -> SceneSpec:
    """Draw one complete scene specification from the pool.

    Event count is uniform over [1, max_events]; categories are drawn
    without replacement except identity-capable ones, which may repeat
    with a fresh identity index and disjoint clips; occurrence counts,
    loudness levels, overlap groups, background presence and SNR follow
    the configured ranges. Draws that cannot fit the target duration are
    rejected and redrawn from the same stream.
    """
    s = config.sampler
    by_cat = pool.by_category()
    durations = {c.id: c.duration_s for c in pool.clips}

    bg_cats = sorted(c for c in s.background_categories if by_cat.get(c))
    fg_cats = sorted(c for c in by_cat if c in taxonomy and c not in set(bg_cats))
    if not fg_cats:
        raise InfeasibleError("no category with enough distinct clips to sample from")

    rng = np.random.default_rng(seed)
    events: list[EventInstanceSpec] | None = None
    for _ in range(_MAX_SAMPLE_ATTEMPTS):
        drawn = _draw_events(rng, s, taxonomy, by_cat, fg_cats)
        if drawn is None:
            continue
        candidate = SceneSpec(
            seed=seed,
            target_duration_s=config.render.target_duration_s,
            sample_rate_hz=config.render.sample_rate_hz,
            events=drawn,
        )
        if scene_min_duration_s(candidate, durations) <= config.render.target_duration_s + 1e-9:
            events = drawn
            break
    if events is None:
        raise InfeasibleError(
            f"no feasible scene after {_MAX_SAMPLE_ATTEMPTS} draws "
            f"(target {config.render.target_duration_s}s too short for the pool?)"
        )

    background = BackgroundSpec(present=False)
    if bg_cats and rng.random() < s.p_background:
        cat = bg_cats[int(rng.integers(len(bg_cats)))]
        clips = by_cat[cat]
        clip = clips[int(rng.integers(len(clips)))]
        snr = float(rng.uniform(*s.snr_range_db))
        background = BackgroundSpec(present=True, clip_id=clip.id, snr_db=snr)

    return SceneSpec(
        seed=seed,
        target_duration_s=config.render.target_duration_s,
        sample_rate_hz=config.render.sample_rate_hz,
        events=events,
        background=background,
    )


def _draw_events(rng, s, taxonomy, by_cat, fg_cats) -> list[EventInstanceSpec] | None:
    """One attempt at drawing the event list; None if the draw dead-ends."""
    n_events = int(rng.integers(1, s.max_events + 1))
    events: list[EventInstanceSpec] = []
    used_clips: dict[str, set[str]] = {}
    instance_count: dict[str, int] = {}
    group_index = 0
    group_size = 0

    for i in range(n_events):
        eligible = []
        for cat in fg_cats:
            details = taxonomy.get(cat).applicable_details
            seen = instance_count.get(cat, 0)
            fresh = len(by_cat[cat]) - len(used_clips.get(cat, ()))
            if fresh < 1:
                continue
            if seen == 0 or DetailKind.IDENTITY in details:
                eligible.append(cat)
        if not eligible:
            return None
        cat = eligible[int(rng.integers(len(eligible)))]
        details = taxonomy.get(cat).applicable_details

        count = 1
        if DetailKind.OCCURRENCE_NUMBER in details and rng.random() < s.p_occurrence_repeat:
            lo, hi = s.occurrence_range
            count = int(rng.integers(lo, hi + 1))

        avail = sorted(c.id for c in by_cat[cat] if c.id not in used_clips.get(cat, ()))
        picks = rng.integers(0, len(avail), size=count)
        clip_ids = [avail[int(j)] for j in picks]
        used_clips.setdefault(cat, set()).update(clip_ids)

        level = LOUDNESS_LEVELS[int(rng.integers(len(LOUDNESS_LEVELS)))]

        if i == 0:
            group_index, group_size = 0, 1
        elif group_size < s.max_simultaneous and rng.random() < s.p_overlap:
            group_size += 1
        else:
            group_index += 1
            group_size = 1

        events.append(
            EventInstanceSpec(
                category=cat,
                clip_ids=clip_ids,
                occurrence_count=count,
                identity_index=instance_count.get(cat, 0),
                loudness_level=level,
                group_index=group_index,
            )
        )
        instance_count[cat] = instance_count.get(cat, 0) + 1
    return events


def validate_scene(spec: SceneSpec, pool: PoolManifest) -> list[str]:
    """Check every structural invariant; violations come back as data."""
    violations = []
    if not spec.events:
        violations.append("scene has no events")
        return violations

    clip_index = {c.id: c for c in pool.clips}
    group_indices = sorted({e.group_index for e in spec.events})
    if group_indices != list(range(len(group_indices))):
        violations.append(f"group indices not contiguous from 0: {group_indices}")

    seen_identity = set()
    for e in spec.events:
        if e.occurrence_count < 1 or not (
            e.occurrence_count == 1 or 2 <= e.occurrence_count <= 4
        ):
            violations.append(f"{e.category}: occurrence_count {e.occurrence_count} out of range")
        if len(e.clip_ids) != e.occurrence_count:
            violations.append(
                f"{e.category}: {len(e.clip_ids)} clips for occurrence_count {e.occurrence_count}"
            )
        if e.loudness_level not in LOUDNESS_LEVELS:
            violations.append(f"{e.category}: unknown loudness {e.loudness_level!r}")
        key = (e.category, e.identity_index)
        if key in seen_identity:
            violations.append(f"duplicate (category, identity_index): {key}")
        seen_identity.add(key)
        for cid in e.clip_ids:
            clip = clip_index.get(cid)
            if clip is None:
                violations.append(f"clip id {cid!r} not in pool")
            elif clip.category != e.category:
                violations.append(
                    f"clip {cid!r} belongs to {clip.category!r}, not {e.category!r}"
                )

    if spec.background.present:
        if not spec.background.clip_id or spec.background.clip_id not in clip_index:
            violations.append(f"background clip {spec.background.clip_id!r} not in pool")
        if spec.background.snr_db is None or not np.isfinite(spec.background.snr_db):
            violations.append("background present but snr_db missing")

    if not violations:
        durations = {c.id: c.duration_s for c in pool.clips}
        needed = scene_min_duration_s(spec, durations)
        if needed > spec.target_duration_s + 1e-9:
            violations.append(
                f"planned events need {needed:.2f}s but target is {spec.target_duration_s}s"
            )
    return violations
