"""Deterministic synthetic data bank for demos and tests.

Builds a complete, self-contained workspace: a clip bank of noise-based
single events (sharp autocorrelation, so onset checks are meaningful),
the curation sidecars, a caption corpus with matching phrase embeddings,
the detail-applicability table, and a ready-to-run pipeline config.
Everything derives from one seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .config import derive_seed
from .pool import PoolManifest, SourceClip, build_manifest
from .taxonomy import DetailKind, EventCategory, Taxonomy

# Category -> (slug, duration range s, clip count, synthesis recipe)
CATEGORY_RECIPES = {
    "a gun fires": ("gun", (0.25, 0.45), 5, "burst"),
    "a cat meows": ("cat", (0.4, 0.7), 5, "chirp"),
    "a man speaks": ("man", (0.9, 1.4), 5, "am_noise"),
    "a woman laughs": ("woman", (0.8, 1.2), 5, "burst_train"),
    "water running": ("water", (1.0, 1.6), 4, "steady"),
    "rain falling": ("rain", (2.5, 4.0), 3, "steady"),
}

BACKGROUND_CATEGORY = "rain falling"

CATEGORY_FLAGS = {
    "a gun fires": "short_event",
    "a cat meows": "short_event",
    "a man speaks": "identity",
    "a woman laughs": "identity",
    "water running": "duration",
    "rain falling": "",
}

# Canonical label first (and lexicographically smallest, so centroid ties
# resolve to it); variants are embedded slightly off the category center.
CATEGORY_PHRASES = {
    "a gun fires": ["a gun fires", "gunshots ring out", "rapid gunfire"],
    "a cat meows": ["a cat meows", "a kitten meowing", "the meow of a cat"],
    "a man speaks": ["a man speaks", "male voice talking", "some man talking"],
    "a woman laughs": ["a woman laughs", "female laughter", "lady laughing"],
    "water running": ["water running", "water streaming down", "water trickling"],
    "rain falling": ["rain falling", "rainfall pattering", "steady rain pouring"],
}

_CLIP_RATES = (32000, 48000)


def _synth(recipe: str, rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    t = np.arange(n) / rate
    noise = rng.standard_normal(n)
    if recipe == "burst":
        env = np.exp(-t / (0.12 * t[-1] + 1e-9))
        x = noise * env
    elif recipe == "chirp":
        f0, f1 = 700.0, 350.0
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * t[-1] + 1e-9))
        env = np.sin(np.pi * np.clip(t / t[-1], 0, 1)) ** 0.5
        x = (0.7 * np.sin(phase) + 0.3 * noise) * env
    elif recipe == "am_noise":
        syllables = 0.55 + 0.45 * np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
        x = noise * syllables
    elif recipe == "burst_train":
        train = np.abs(np.sin(2 * np.pi * 5.0 * t)) ** 2
        x = noise * train
    elif recipe == "steady":
        fade = min(n // 10, round(0.05 * rate))
        env = np.ones(n)
        if fade > 0:
            ramp = np.linspace(0.0, 1.0, fade)
            env[:fade] = ramp
            env[-fade:] = ramp[::-1]
        x = noise * env
    else:
        raise ValueError(f"unknown recipe {recipe!r}")
    peak = np.max(np.abs(x))
    return 0.5 * x / peak if peak > 0 else x


@dataclass
class Workspace:
    root: Path
    config_path: Path
    corpus: Path
    embeddings: Path
    applicability: Path
    clips_table: Path
    activity: Path
    similarity: Path


def fixture_taxonomy() -> Taxonomy:
    """The clip-bank category system, built directly (no clustering)."""
    categories = []
    for i, (label, flag) in enumerate(sorted(CATEGORY_FLAGS.items())):
        details = {DetailKind.TEMPORAL_RELATIONSHIP, DetailKind.LOUDNESS}
        if flag == "short_event":
            details.add(DetailKind.OCCURRENCE_NUMBER)
        elif flag == "identity":
            details.add(DetailKind.IDENTITY)
        elif flag == "duration":
            details.add(DetailKind.DURATION)
        categories.append(
            EventCategory(
                id=i,
                label=label,
                member_phrases=sorted(CATEGORY_PHRASES[label]),
                is_short_event=flag == "short_event",
                applicable_details=details,
            )
        )
    return Taxonomy(categories=categories)


def build_clip_bank(root, seed: int = 1234) -> PoolManifest:
    """Write the synthetic WAV bank plus curation sidecars under `root`
    and return a ready manifest (as if curation had already run)."""
    root = Path(root)
    audio_dir = root / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    clips: list[SourceClip] = []
    table_lines = []
    activity_lines = []
    similarity_lines = []
    for label, (slug, (lo, hi), count, recipe) in sorted(CATEGORY_RECIPES.items()):
        for i in range(count):
            rng = np.random.default_rng(derive_seed(seed, f"clip:{slug}:{i}"))
            rate = _CLIP_RATES[i % len(_CLIP_RATES)]
            n = round(float(rng.uniform(lo, hi)) * rate)
            samples = _synth(recipe, rng, n, rate)
            clip_id = f"{slug}{i:02d}"
            rel = f"audio/{clip_id}.wav"
            write_wav(AudioBuffer(samples, rate), root / rel)
            duration = n / rate
            score = round(float(0.6 + 0.35 * rng.random()), 4)
            clips.append(
                SourceClip(
                    id=clip_id,
                    audio_path=str(root / rel),
                    category=label,
                    duration_s=duration,
                    sample_rate_hz=rate,
                    activity_segments=[(0.0, duration)],
                    similarity_score=score,
                )
            )
            table_lines.append(f"{clip_id}\t{rel}\t{label}\t{duration!r}\t{rate}")
            activity_lines.append(f"{clip_id}\t0.0-{duration!r}")
            similarity_lines.append(f"{clip_id}\t{score}")

    (root / "clips.tsv").write_text("\n".join(table_lines) + "\n", encoding="utf-8")
    (root / "activity.tsv").write_text("\n".join(activity_lines) + "\n", encoding="utf-8")
    (root / "similarity.tsv").write_text("\n".join(similarity_lines) + "\n", encoding="utf-8")
    return build_manifest(clips, fixture_taxonomy())


def build_text_inputs(root, seed: int = 1234) -> None:
    """Write corpus captions, phrase embeddings and the detail table."""
    root = Path(root)
    rng = np.random.default_rng(derive_seed(seed, "text"))

    labels = sorted(CATEGORY_PHRASES)
    dim = 8
    emb_lines = []
    for c, label in enumerate(labels):
        center = np.zeros(dim)
        center[c] = 1.0
        for j, phrase in enumerate(CATEGORY_PHRASES[label]):
            if j == 0:
                vec = center
            else:
                vec = center + 0.04 * rng.standard_normal(dim)
                vec = vec / np.linalg.norm(vec)
            emb_lines.append(phrase + "\t" + "\t".join(repr(float(v)) for v in vec))
    (root / "embeddings.tsv").write_text("\n".join(emb_lines) + "\n", encoding="utf-8")

    all_phrases = [p for label in labels for p in CATEGORY_PHRASES[label]]
    joiners = [", ", " and ", " then ", " while ", " followed by "]
    # First cover every phrase once so no category loses its canonical
    # label to sampling luck, then add random combinations.
    pending = list(all_phrases)
    captions = []
    for _ in range(30):
        k = int(rng.integers(1, 4))
        picks = []
        for _ in range(k):
            if pending:
                picks.append(pending.pop(0))
            else:
                picks.append(all_phrases[int(rng.integers(len(all_phrases)))])
        caption = picks[0]
        for p in picks[1:]:
            caption += joiners[int(rng.integers(len(joiners)))] + p
        captions.append(caption[0].upper() + caption[1:])
    (root / "corpus.txt").write_text("\n".join(captions) + "\n", encoding="utf-8")

    table = [f"{label}: {CATEGORY_FLAGS[label]}".rstrip(": ").rstrip() for label in labels]
    table = [line if ":" in line else f"{line}:" for line in table]
    (root / "applicability.txt").write_text("\n".join(table) + "\n", encoding="utf-8")


def build_workspace(
    root,
    seed: int = 1234,
    master_seed: int = 7,
    sample_rate_hz: int = 32000,
    target_duration_s: float = 10.0,
) -> Workspace:
    """Assemble the whole demo/test workspace with a runnable config."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    build_clip_bank(root, seed)
    build_text_inputs(root, seed)

    config = {
        "master_seed": master_seed,
        "taxonomy": {"k": len(CATEGORY_RECIPES)},
        # the bank's short events run down to 0.25 s, so relax the floor
        "pool": {"min_duration_s": 0.2},
        "sampler": {"background_categories": [BACKGROUND_CATEGORY]},
        "render": {
            "sample_rate_hz": sample_rate_hz,
            "target_duration_s": target_duration_s,
        },
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Workspace(
        root=root,
        config_path=config_path,
        corpus=root / "corpus.txt",
        embeddings=root / "embeddings.tsv",
        applicability=root / "applicability.txt",
        clips_table=root / "clips.tsv",
        activity=root / "activity.tsv",
        similarity=root / "similarity.tsv",
    )
