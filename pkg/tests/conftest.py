import numpy as np
import pytest

from soundscene.config import PipelineConfig, load_config
from soundscene.pool import (
    PoolManifest,
    SourceClip,
    build_manifest,
    read_activity_sidecar,
    read_clip_table,
    read_similarity_sidecar,
)
from soundscene.synth import build_workspace, fixture_taxonomy


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Synthetic clip bank + text inputs + config, built once per session."""
    return build_workspace(tmp_path_factory.mktemp("bank"))


@pytest.fixture(scope="session")
def bank_taxonomy():
    return fixture_taxonomy()


@pytest.fixture(scope="session")
def bank_pool(workspace, bank_taxonomy) -> PoolManifest:
    clips = read_clip_table(workspace.clips_table)
    activity = read_activity_sidecar(workspace.activity)
    similarity = read_similarity_sidecar(workspace.similarity)
    for clip in clips:
        clip.activity_segments = activity.get(clip.id, [])
        clip.similarity_score = similarity.get(clip.id)
    return build_manifest(clips, bank_taxonomy)


@pytest.fixture(scope="session")
def bank_config(workspace) -> PipelineConfig:
    return load_config(workspace.config_path)


def make_clip(
    clip_id: str,
    category: str = "a cat meows",
    duration_s: float = 1.0,
    sample_rate_hz: int = 32000,
    activity=None,
    similarity_score=0.9,
    audio_path: str = "",
) -> SourceClip:
    clip = SourceClip(
        id=clip_id,
        audio_path=audio_path or f"{clip_id}.wav",
        category=category,
        duration_s=duration_s,
        sample_rate_hz=sample_rate_hz,
        activity_segments=activity if activity is not None else [(0.0, duration_s)],
        similarity_score=similarity_score,
    )
    clip.validate()
    return clip


def make_pool(clips) -> PoolManifest:
    counts: dict[str, int] = {}
    for c in clips:
        counts[c.category] = counts.get(c.category, 0) + 1
    return PoolManifest(clips=sorted(clips, key=lambda c: c.id), per_category_counts=counts)


def white_buffer(n: int, rate: int = 32000, seed: int = 0, scale: float = 0.3):
    from soundscene.audio import AudioBuffer

    rng = np.random.default_rng(seed)
    return AudioBuffer(scale * rng.standard_normal(n), rate)
