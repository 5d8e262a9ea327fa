"""Pipeline configuration: one JSON document drives every stage.

Relative paths inside the file are resolved against the directory the
config was loaded from, so a config plus its data files relocate together.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import DataFormatError, ValidationError


def derive_seed(master_seed: int, tag) -> int:
    """Stable 64-bit child seed from a master seed and a tag.

    Uses SHA-256 over a canonical string, so batches can be generated in
    any order (or in parallel) with identical per-scene streams.
    """
    digest = hashlib.sha256(f"soundscene:{master_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class TaxonomyConfig:
    corpus: str = "corpus.txt"
    embeddings: str = "embeddings.tsv"
    applicability: str = "applicability.txt"
    taxonomy_file: str = "taxonomy.json"
    k: int = 64


@dataclass
class PoolConfig:
    clips: str = "clips.tsv"
    activity: str = "activity.tsv"
    similarity: str = "similarity.tsv"
    manifest_file: str = "pool.json"
    min_duration_s: float = 0.5
    max_duration_s: float = 30.0
    max_nontarget_ratio: float = 0.3
    min_segment_s: float = 1.0
    similarity_threshold: float = 0.3


@dataclass
class SamplerConfig:
    max_events: int = 3
    max_simultaneous: int = 2
    p_overlap: float = 0.5
    p_occurrence_repeat: float = 0.5
    occurrence_range: tuple[int, int] = (2, 4)
    p_background: float = 0.5
    snr_range_db: tuple[float, float] = (5.0, 20.0)
    background_categories: tuple[str, ...] = ()


@dataclass
class RenderConfig:
    sample_rate_hz: int = 32000
    target_duration_s: float = 10.0
    keep_stems: bool = False


@dataclass
class LlmConfig:
    base_url: str = ""
    model: str = ""
    auth_env: str = "SOUNDSCENE_LLM_TOKEN"
    timeout_s: float = 10.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    concurrency: int = 4


@dataclass
class CaptionConfig:
    mode: str = "template"  # "template" or "llm"
    llm: LlmConfig = field(default_factory=LlmConfig)
    keyword_filter: bool = True
    similarity_scores: str | None = None
    similarity_threshold: float = 0.3


@dataclass
class EvalConfig:
    per_sample_tsv: bool = True


@dataclass
class PipelineConfig:
    master_seed: int
    taxonomy: TaxonomyConfig = field(default_factory=TaxonomyConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    caption: CaptionConfig = field(default_factory=CaptionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        s = self.sampler
        for name, p in [
            ("p_overlap", s.p_overlap),
            ("p_occurrence_repeat", s.p_occurrence_repeat),
            ("p_background", s.p_background),
        ]:
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"sampler.{name} must be in [0, 1], got {p}")
        if s.max_events < 1:
            raise ValidationError("sampler.max_events must be >= 1")
        if s.max_simultaneous < 1:
            raise ValidationError("sampler.max_simultaneous must be >= 1")
        lo, hi = s.occurrence_range
        if not 2 <= lo <= hi:
            raise ValidationError(f"sampler.occurrence_range invalid: {s.occurrence_range}")
        if s.snr_range_db[0] >= s.snr_range_db[1]:
            raise ValidationError("sampler.snr_range_db must be a non-degenerate range")
        if self.pool.min_duration_s >= self.pool.max_duration_s:
            raise ValidationError("pool duration bounds must satisfy min < max")
        if self.render.sample_rate_hz <= 0 or self.render.target_duration_s <= 0:
            raise ValidationError("render format fields must be positive")
        if self.caption.mode not in ("template", "llm"):
            raise ValidationError(f"caption.mode must be template|llm, got {self.caption.mode}")
        if self.taxonomy.k < 1:
            raise ValidationError("taxonomy.k must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _build(cls, doc: dict, context: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise DataFormatError(f"{context}: unknown config keys {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> PipelineConfig:
    """Load, resolve relative paths, and validate a pipeline config."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    if "master_seed" not in doc:
        raise DataFormatError(f"{path}: master_seed is required")

    sections = {
        "taxonomy": TaxonomyConfig,
        "pool": PoolConfig,
        "sampler": SamplerConfig,
        "render": RenderConfig,
        "eval": EvalConfig,
    }
    kwargs: dict = {"master_seed": int(doc["master_seed"])}
    for name, cls in sections.items():
        kwargs[name] = _build(cls, doc.get(name, {}), f"{path}:{name}")
    cap_doc = dict(doc.get("caption", {}))
    llm_doc = cap_doc.pop("llm", {})
    caption = _build(CaptionConfig, cap_doc, f"{path}:caption")
    caption.llm = _build(LlmConfig, llm_doc, f"{path}:caption.llm")
    kwargs["caption"] = caption

    cfg = PipelineConfig(**kwargs)
    cfg.validate()

    base = path.parent
    tax, pool = cfg.taxonomy, cfg.pool
    tax.corpus = str(base / tax.corpus)
    tax.embeddings = str(base / tax.embeddings)
    tax.applicability = str(base / tax.applicability)
    tax.taxonomy_file = str(base / tax.taxonomy_file)
    pool.clips = str(base / pool.clips)
    pool.activity = str(base / pool.activity)
    pool.similarity = str(base / pool.similarity)
    pool.manifest_file = str(base / pool.manifest_file)
    if cfg.caption.similarity_scores:
        cfg.caption.similarity_scores = str(base / cfg.caption.similarity_scores)
    return cfg
