"""Scene rendering: sample-accurate placement, gains, mixing, background
beds at a target SNR, and peak-safe finalization.

Gains follow a fixed loudness convention: every clip is first scaled so
the RMS over its active region sits at -20 dBFS, then the level offset is
applied (loud 0 dB, moderate -7 dB, quiet -14 dB). Layout is drawn from
the scene seed with gaps clamped to the remaining slack, so any scene
that passes the minimum-duration check always lays out.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import AudioBuffer, db_to_linear, linear_to_db, load_wav, resample, rms
from .config import derive_seed
from .errors import InfeasibleError, ValidationError
from .pool import PoolManifest, SourceClip
from .sampler import (
    GROUP_START_JITTER_MAX_S,
    INTER_GROUP_GAP_RANGE_S,
    INTRA_OCCURRENCE_GAP_RANGE_S,
    SceneSpec,
)

REFERENCE_RMS_DBFS = -20.0
PEAK_CEILING_DBFS = -1.0
LEVEL_OFFSETS_DB = {"loud": 0.0, "moderate": -7.0, "quiet": -14.0}
BACKGROUND_CROSSFADE_S = 0.05


@dataclass
class PlacedOccurrence:
    clip_id: str
    onset_sample: int
    length_samples: int
    gain_linear: float
    event_ref: tuple[str, int, int]  # (category, identity_index, occurrence ordinal)

    @property
    def end_sample(self) -> int:
        return self.onset_sample + self.length_samples


@dataclass
class Timeline:
    scene_length_samples: int
    placements: list[PlacedOccurrence]
    background: tuple[str, float] | None = None

    def validate(self) -> None:
        by_instance: dict[tuple[str, int], list[PlacedOccurrence]] = {}
        for p in self.placements:
            if p.onset_sample < 0 or p.end_sample > self.scene_length_samples:
                raise ValidationError(f"placement of {p.clip_id} outside the scene")
            by_instance.setdefault(p.event_ref[:2], []).append(p)
        for key, ps in by_instance.items():
            ps = sorted(ps, key=lambda p: p.event_ref[2])
            for a, b in zip(ps, ps[1:]):
                if a.end_sample > b.onset_sample:
                    raise ValidationError(f"occurrences of {key} overlap")

    def group_spans(self, spec: SceneSpec) -> list[tuple[int, int]]:
        """(first onset, last end) per group, in group order."""
        instance_group = {(e.category, e.identity_index): e.group_index for e in spec.events}
        spans: dict[int, list[int]] = {}
        for p in self.placements:
            g = instance_group[p.event_ref[:2]]
            spans.setdefault(g, []).extend([p.onset_sample, p.end_sample])
        return [(min(spans[g]), max(spans[g])) for g in sorted(spans)]


def gain_for_level(level: str) -> float:
    """Loudness level to gain in dB relative to the -20 dBFS RMS reference."""
    try:
        return LEVEL_OFFSETS_DB[level]
    except KeyError:
        raise ValueError(f"unknown loudness level {level!r}") from None


def place_events(spec: SceneSpec, clip_lengths: dict[str, int]) -> Timeline:
    """Resolve a validated scene spec into sample-accurate placements.

    Groups are laid out left to right with inter-group gaps drawn from
    [0.2, 1.0] s, later instances of a group start within 0.5 s of the
    group start, and repeated occurrences are separated by [0.3, 1.5] s,
    all seeded from the spec. Each draw is clamped to the slack still
    available, so a scene that fits at minimum spacing always places.
    """
    rate = spec.sample_rate_hz
    scene_len = round(spec.target_duration_s * rate)
    inter_min, inter_max = (round(v * rate) for v in INTER_GROUP_GAP_RANGE_S)
    intra_min, intra_max = (round(v * rate) for v in INTRA_OCCURRENCE_GAP_RANGE_S)
    jitter_max = round(GROUP_START_JITTER_MAX_S * rate)

    groups = spec.groups()
    inst_lengths = {}
    inst_min = {}
    for e in spec.events:
        lens = [clip_lengths[c] for c in e.clip_ids]
        inst_lengths[(e.category, e.identity_index)] = lens
        inst_min[(e.category, e.identity_index)] = (
            sum(lens) + (e.occurrence_count - 1) * intra_min
        )
    total_min = sum(
        max(inst_min[(e.category, e.identity_index)] for e in group) for group in groups
    ) + (len(groups) - 1) * inter_min
    if total_min > scene_len:
        raise InfeasibleError(
            f"layout infeasible: events need {total_min} samples, scene has {scene_len}"
        )

    rng = np.random.default_rng(derive_seed(spec.seed, "layout"))
    slack = scene_len - total_min

    def draw(cap: int) -> int:
        nonlocal slack
        extra = int(rng.integers(0, min(cap, slack) + 1))
        slack -= extra
        return extra

    placements: list[PlacedOccurrence] = []
    pos = 0
    for g, group in enumerate(groups):
        if g > 0:
            pos += inter_min + draw(inter_max - inter_min)
        group_start = pos
        group_end = group_start
        for idx, e in enumerate(group):
            key = (e.category, e.identity_index)
            onset = group_start + (draw(jitter_max) if idx > 0 else 0)
            gain = db_to_linear(gain_for_level(e.loudness_level))
            for k, (cid, length) in enumerate(zip(e.clip_ids, inst_lengths[key])):
                placements.append(
                    PlacedOccurrence(
                        clip_id=cid,
                        onset_sample=onset,
                        length_samples=length,
                        gain_linear=gain,
                        event_ref=(e.category, e.identity_index, k),
                    )
                )
                onset += length
                if k < e.occurrence_count - 1:
                    onset += intra_min + draw(intra_max - intra_min)
            group_end = max(group_end, placements[-1].end_sample)
        pos = group_end

    timeline = Timeline(scene_length_samples=scene_len, placements=placements)
    timeline.validate()
    return timeline


def mix(timeline: Timeline, clip_audio: dict[str, AudioBuffer]) -> AudioBuffer:
    """Sum gain-scaled placements into a silent scene buffer."""
    rates = {b.sample_rate_hz for b in clip_audio.values()}
    if len(rates) != 1:
        raise ValidationError(f"clips must share one sample rate, got {sorted(rates)}")
    out = np.zeros(timeline.scene_length_samples, dtype=np.float64)
    for p in timeline.placements:
        clip = clip_audio[p.clip_id].samples[: p.length_samples]
        out[p.onset_sample : p.onset_sample + len(clip)] += p.gain_linear * clip
    return AudioBuffer(out, rates.pop())


def active_mask(timeline: Timeline) -> np.ndarray:
    """Boolean union of all foreground placement spans."""
    mask = np.zeros(timeline.scene_length_samples, dtype=bool)
    for p in timeline.placements:
        mask[p.onset_sample : p.end_sample] = True
    return mask


def normalize_to_reference(
    buffer: AudioBuffer, activity_segments: list[tuple[float, float]] | None = None
) -> AudioBuffer:
    """Scale a clip so its active-region RMS hits the -20 dBFS reference."""
    if activity_segments:
        mask = np.zeros(len(buffer.samples), dtype=bool)
        for onset, offset in activity_segments:
            a = round(onset * buffer.sample_rate_hz)
            b = round(offset * buffer.sample_rate_hz)
            mask[a:b] = True
        level = rms(buffer.samples, mask)
    else:
        level = rms(buffer.samples)
    if level < 1e-12:
        raise InfeasibleError("clip is silent over its active region")
    return AudioBuffer(
        buffer.samples * (db_to_linear(REFERENCE_RMS_DBFS) / level), buffer.sample_rate_hz
    )


def loop_to_length(buffer: AudioBuffer, n_samples: int) -> AudioBuffer:
    """Loop or truncate a background bed to an exact length; loop seams get
    a 50 ms equal-power crossfade."""
    x = buffer.samples
    if len(x) >= n_samples:
        return AudioBuffer(x[:n_samples], buffer.sample_rate_hz)
    fade = min(round(BACKGROUND_CROSSFADE_S * buffer.sample_rate_hz), len(x) // 2)
    out = x
    while len(out) < n_samples:
        if fade > 0:
            t = np.arange(1, fade + 1) / (fade + 1)
            seam = out[-fade:] * np.sqrt(1.0 - t) + x[:fade] * np.sqrt(t)
            out = np.concatenate([out[:-fade], seam, x[fade:]])
        else:
            out = np.concatenate([out, x])
    return AudioBuffer(out[:n_samples], buffer.sample_rate_hz)


def background_gain(
    fg: AudioBuffer, bg: AudioBuffer, snr_db: float, mask: np.ndarray
) -> float:
    """Gain g so that fg over bg measures snr_db over the active mask."""
    fg_rms = rms(fg.samples, mask)
    if fg_rms < 1e-12:
        raise InfeasibleError("degenerate scene: foreground silent over active mask")
    bg_rms = rms(bg.samples, mask)
    if bg_rms < 1e-12:
        raise InfeasibleError("background silent over active mask")
    return fg_rms / (bg_rms * db_to_linear(snr_db))


def add_background(
    fg: AudioBuffer, bg: AudioBuffer, snr_db: float, mask: np.ndarray
) -> AudioBuffer:
    """Mix a background bed under the foreground at the requested SNR.

    The bed must already be looped/truncated to the foreground length.
    """
    if len(bg.samples) != len(fg.samples):
        raise ValidationError("background must match foreground length")
    g = background_gain(fg, bg, snr_db, mask)
    return AudioBuffer(fg.samples + g * bg.samples, fg.sample_rate_hz)


def finalize_gain(buffer: AudioBuffer) -> float:
    """Gain that brings the peak down to -1 dBFS; 1.0 if already below."""
    ceiling = db_to_linear(PEAK_CEILING_DBFS)
    peak = float(np.max(np.abs(buffer.samples)))
    return ceiling / peak if peak > ceiling else 1.0


def finalize(buffer: AudioBuffer) -> AudioBuffer:
    g = finalize_gain(buffer)
    if g == 1.0:
        return buffer
    return AudioBuffer(buffer.samples * g, buffer.sample_rate_hz)


class ClipCache:
    """Loads, trims, resamples and reference-normalizes clips, keyed by
    (clip id, target rate). Population is lock-guarded so concurrent scene
    renders share one cache without racing; lookups never mutate results."""

    def __init__(self, pool: PoolManifest):
        self._clips = {c.id: c for c in pool.clips}
        self._cache: dict[tuple[str, int], AudioBuffer] = {}
        self._lock = threading.Lock()

    def clip(self, clip_id: str) -> SourceClip:
        try:
            return self._clips[clip_id]
        except KeyError:
            raise ValidationError(f"unknown clip id {clip_id!r}") from None

    def get(self, clip_id: str, rate: int) -> AudioBuffer:
        key = (clip_id, rate)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        clip = self.clip(clip_id)
        buf = load_wav(clip.audio_path)
        if clip.source_span_s is not None:
            a = round(clip.source_span_s[0] * buf.sample_rate_hz)
            b = round(clip.source_span_s[1] * buf.sample_rate_hz)
            buf = AudioBuffer(buf.samples[a:b], buf.sample_rate_hz)
        buf = resample(buf, rate)
        buf = normalize_to_reference(buf, clip.activity_segments)
        with self._lock:
            return self._cache.setdefault(key, buf)


@dataclass
class RenderResult:
    buffer: AudioBuffer
    timeline: Timeline
    foreground: AudioBuffer
    stems: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    background_stem: np.ndarray | None = None
    achieved_snr_db: float | None = None
    normalization_gain: float = 1.0

    def log(self, spec: SceneSpec) -> dict:
        rate = spec.sample_rate_hz
        return {
            "seed": spec.seed,
            "sample_rate_hz": rate,
            "scene_length_samples": self.timeline.scene_length_samples,
            "normalization_gain": self.normalization_gain,
            "requested_snr_db": spec.background.snr_db,
            "achieved_snr_db": self.achieved_snr_db,
            "background": (
                {"clip_id": self.timeline.background[0], "gain_linear": self.timeline.background[1]}
                if self.timeline.background
                else None
            ),
            "placements": [
                {
                    "clip_id": p.clip_id,
                    "category": p.event_ref[0],
                    "identity_index": p.event_ref[1],
                    "occurrence": p.event_ref[2],
                    "onset_sample": p.onset_sample,
                    "length_samples": p.length_samples,
                    "onset_s": p.onset_sample / rate,
                    "length_s": p.length_samples / rate,
                    "gain_linear": p.gain_linear,
                }
                for p in self.timeline.placements
            ],
        }


def render_scene(
    spec: SceneSpec,
    pool: PoolManifest,
    cache: ClipCache | None = None,
    keep_stems: bool = False,
) -> RenderResult:
    """Render a scene spec to audio, end to end and bit-deterministically.

    Stems (per-instance foreground renders and the scaled background bed,
    both pre-normalization) are retained on request for verification.
    """
    cache = cache or ClipCache(pool)
    rate = spec.sample_rate_hz
    needed = sorted({cid for e in spec.events for cid in e.clip_ids})
    buffers = {cid: cache.get(cid, rate) for cid in needed}
    lengths = {cid: len(buffers[cid].samples) for cid in needed}

    timeline = place_events(spec, lengths)
    fg = mix(timeline, buffers)
    mask = active_mask(timeline)

    stems: dict[tuple[str, int], np.ndarray] = {}
    if keep_stems:
        for e in spec.events:
            key = (e.category, e.identity_index)
            sub = Timeline(
                scene_length_samples=timeline.scene_length_samples,
                placements=[p for p in timeline.placements if p.event_ref[:2] == key],
            )
            stems[key] = mix(sub, buffers).samples

    mixed = fg
    bg_stem = None
    achieved = None
    if spec.background.present:
        bed = loop_to_length(
            cache.get(spec.background.clip_id, rate), timeline.scene_length_samples
        )
        g = background_gain(fg, bed, spec.background.snr_db, mask)
        scaled = g * bed.samples
        mixed = AudioBuffer(fg.samples + scaled, rate)
        achieved = linear_to_db(rms(fg.samples, mask) / rms(scaled, mask))
        timeline = replace(timeline, background=(spec.background.clip_id, g))
        if keep_stems:
            bg_stem = scaled

    norm = finalize_gain(mixed)
    final = mixed if norm == 1.0 else AudioBuffer(mixed.samples * norm, rate)

    return RenderResult(
        buffer=final,
        timeline=timeline,
        foreground=fg,
        stems=stems,
        background_stem=bg_stem,
        achieved_snr_db=achieved,
        normalization_gain=norm,
    )
