"""soundscene: deterministic audio scene simulation with detail-controlled
captions, plus metrics for checking caption detail fidelity.

The pipeline runs in four stages, each usable as a library or via the CLI:

taxonomy : caption phrases -> clustered sound-event categories
pool     : candidate clips -> curated single-event pool (three filters)
simulate : pool + taxonomy -> rendered scenes, metadata and captions
eval     : captions vs. references -> temporal F1, BLEU-4, detail coverage
"""

from .audio import AudioBuffer, load_wav, resample, rms, write_wav
from .caption import (
    CaptionCandidate,
    SceneMetadata,
    build_llm_prompt,
    build_metadata,
    detail_kinds_in_metadata,
    find_detail_keywords,
    keyword_detail_filter,
    similarity_pair_filter,
    template_caption,
)
from .config import PipelineConfig, derive_seed, load_config
from .errors import DataFormatError, InfeasibleError, SoundSceneError, ValidationError
from .metrics import (
    MetricReport,
    TemporalRelationSet,
    bleu4,
    detail_coverage,
    extract_relations,
    relations_from_metadata,
    temporal_f1,
)
from .pool import (
    PoolManifest,
    SourceClip,
    apply_activity_filter,
    apply_similarity_filter,
    build_manifest,
    curate,
    filter_by_duration,
)
from .render import (
    ClipCache,
    Timeline,
    add_background,
    finalize,
    gain_for_level,
    mix,
    place_events,
    render_scene,
)
from .sampler import BackgroundSpec, EventInstanceSpec, SceneSpec, sample_scene, validate_scene
from .taxonomy import (
    DetailKind,
    EventCategory,
    EventPhrase,
    Taxonomy,
    extract_event_phrases,
    kmeans,
    load_applicability_table,
    representative_label,
)

__version__ = "0.1.0"
