"""Sound-event category system: phrase extraction, clustering, labels and
the detail-applicability table that constrains simulation.

Event phrases are pulled out of captions with a fixed delimiter lexicon,
matched to externally supplied embedding vectors, grouped with seeded
k-means, and each cluster is labelled with its member phrase closest to
the centroid. The applicability table then says which auditory details
(occurrence number, identity, ...) each category supports.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationError


class DetailKind(str, enum.Enum):
    OCCURRENCE_NUMBER = "OccurrenceNumber"
    IDENTITY = "Identity"
    LOUDNESS = "Loudness"
    TEMPORAL_RELATIONSHIP = "TemporalRelationship"
    DURATION = "Duration"
    BACKGROUND_PRESENCE = "BackgroundPresence"


# The four detail kinds the simulation actively controls.
CONTROLLED_DETAILS = (
    DetailKind.OCCURRENCE_NUMBER,
    DetailKind.IDENTITY,
    DetailKind.LOUDNESS,
    DetailKind.TEMPORAL_RELATIONSHIP,
)

# Phrase-splitting lexicon. Multi-word delimiters are matched with their
# surrounding spaces so words like "band" or "season" survive.
DELIMITERS = (
    " followed by ",
    " and ",
    " then ",
    " while ",
    " as ",
    " before ",
    " after ",
    " with ",
    ",",
)

_SPLIT_RE = re.compile("|".join(re.escape(d) for d in DELIMITERS))

_APPLICABILITY_FLAGS = {
    "short_event": DetailKind.OCCURRENCE_NUMBER,
    "identity": DetailKind.IDENTITY,
    "duration": DetailKind.DURATION,
}


@dataclass(frozen=True)
class EventPhrase:
    """One extracted sound-event phrase, lowercase, delimiter-free."""

    text: str
    source_caption_id: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("EventPhrase text must be non-empty")
        if _SPLIT_RE.search(self.text):
            raise ValidationError(f"phrase contains a delimiter: {self.text!r}")


@dataclass(eq=False)
class EmbeddingRecord:
    phrase: EventPhrase
    vector: np.ndarray


@dataclass
class EventCategory:
    id: int
    label: str
    member_phrases: list[str]
    is_short_event: bool
    applicable_details: set[DetailKind]

    def validate(self) -> None:
        if self.label not in self.member_phrases:
            raise ValidationError(
                f"category {self.id}: label {self.label!r} not a member phrase"
            )
        if DetailKind.OCCURRENCE_NUMBER in self.applicable_details and not self.is_short_event:
            raise ValidationError(
                f"category {self.label!r}: occurrence number requires a short event"
            )
        if _SPLIT_RE.search(self.label):
            raise ValidationError(f"category label contains a delimiter: {self.label!r}")


@dataclass
class Taxonomy:
    """The full category system produced by clustering."""

    categories: list[EventCategory]
    k: int = 0

    def __post_init__(self):
        if self.k == 0:
            self.k = len(self.categories)
        ids = sorted(c.id for c in self.categories)
        if ids != list(range(len(self.categories))):
            raise ValidationError("category ids must be dense 0..k-1")
        for cat in self.categories:
            cat.validate()
        self._by_label = {c.label: c for c in self.categories}

    def labels(self) -> list[str]:
        return [c.label for c in self.categories]

    def get(self, label: str) -> EventCategory:
        try:
            return self._by_label[label]
        except KeyError:
            raise ValidationError(f"unknown category label {label!r}") from None

    def __contains__(self, label: str) -> bool:
        return label in self._by_label

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "categories": [
                {
                    "id": c.id,
                    "label": c.label,
                    "member_phrases": list(c.member_phrases),
                    "is_short_event": c.is_short_event,
                    "applicable_details": sorted(d.value for d in c.applicable_details),
                }
                for c in self.categories
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "Taxonomy":
        cats = [
            EventCategory(
                id=c["id"],
                label=c["label"],
                member_phrases=list(c["member_phrases"]),
                is_short_event=bool(c["is_short_event"]),
                applicable_details={DetailKind(d) for d in c["applicable_details"]},
            )
            for c in doc["categories"]
        ]
        return cls(categories=sorted(cats, key=lambda c: c.id), k=doc.get("k", len(cats)))

    @classmethod
    def load(cls, path) -> "Taxonomy":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read taxonomy {path}: {exc}") from exc
        return cls.from_dict(doc)


def extract_event_phrases(caption: str, caption_id: str = "") -> list[EventPhrase]:
    """Split a caption into event phrases at the delimiter lexicon.

    Fragments are lowercased and trimmed; empty fragments are dropped.
    An empty caption yields an empty list.
    """
    fragments = _SPLIT_RE.split(caption.lower())
    return [
        EventPhrase(text=frag.strip(), source_caption_id=caption_id)
        for frag in fragments
        if frag.strip()
    ]


def load_embeddings(path) -> list[EmbeddingRecord]:
    """Read phrase embeddings: one record per line, phrase TAB d floats.

    Vectors are validated (finite, one shared dimension) and L2-normalized
    so Euclidean k-means behaves like cosine clustering.
    """
    records: list[EmbeddingRecord] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataFormatError(f"{path}:{lineno}: expected phrase TAB floats")
            phrase = parts[0].strip().lower()
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad float ({exc})") from exc
            if not np.all(np.isfinite(vec)):
                raise DataFormatError(f"{path}:{lineno}: non-finite embedding value")
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise DataFormatError(f"{path}:{lineno}: empty vector")
            elif len(vec) != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: dimension {len(vec)} != {dim} seen earlier"
                )
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise DataFormatError(f"{path}:{lineno}: zero vector cannot be normalized")
            records.append(
                EmbeddingRecord(phrase=EventPhrase(phrase, f"line{lineno}"), vector=vec / norm)
            )
    return records


def lloyd_kmeans(
    vectors: np.ndarray, k: int, seed: int, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Seeded k-means++ plus Lloyd iterations on raw vectors.

    Returns (assignments, centroids, objective_trace) where the trace holds
    the sum of squared distances after every iteration; it is non-increasing.
    Convergence is declared when no assignment changes. Empty clusters are
    reseeded to the point farthest from its current centroid.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    if k <= 0 or k > n:
        raise ValueError(f"k={k} must be in 1..{n}")
    if not np.all(np.isfinite(x)):
        raise DataFormatError("non-finite vector passed to k-means")

    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))  # all points coincide with a center
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dist, axis=1)

        for j in range(k):
            if not np.any(new_assign == j):
                worst = int(np.argmax(dist[np.arange(n), new_assign]))
                centers[j] = x[worst]
                new_assign[worst] = j
                dist[:, j] = np.sum((x - centers[j]) ** 2, axis=1)

        changed = not np.array_equal(new_assign, assign)
        assign = new_assign
        for j in range(k):
            centers[j] = x[assign == j].mean(axis=0)
        trace.append(float(np.sum((x - centers[assign]) ** 2)))
        if not changed:
            break
    return assign, centers, trace


def kmeans(
    records: list[EmbeddingRecord], k: int, seed: int
) -> tuple[list[int], np.ndarray]:
    """Cluster embedding records deterministically.

    Records are pre-sorted on phrase text so the seeding (and therefore the
    result) is independent of input order; assignments are returned in the
    original order.
    """
    if not records:
        raise ValueError("no records to cluster")
    order = sorted(range(len(records)), key=lambda i: (records[i].phrase.text, i))
    x = np.stack([records[i].vector for i in order])
    assign_sorted, centers, _ = lloyd_kmeans(x, k, seed)
    assignments = [0] * len(records)
    for pos, orig in enumerate(order):
        assignments[orig] = int(assign_sorted[pos])
    return assignments, centers


def representative_label(
    cluster_members: list[EmbeddingRecord], centroid: np.ndarray
) -> EventPhrase:
    """Member phrase with maximal cosine similarity to the centroid;
    ties break to the lexicographically smallest phrase."""
    if not cluster_members:
        raise ValueError("cannot label an empty cluster")
    c = np.asarray(centroid, dtype=np.float64)
    c_norm = float(np.linalg.norm(c))

    def cosine(rec: EmbeddingRecord) -> float:
        v = rec.vector
        denom = float(np.linalg.norm(v)) * c_norm
        return float(np.dot(v, c) / denom) if denom > 0 else 0.0

    best = min(cluster_members, key=lambda r: (-cosine(r), r.phrase.text))
    return best.phrase


def load_applicability_table(path) -> dict[str, set[DetailKind]]:
    """Parse the per-category detail table: `label: flag[,flag]` per line.

    Loudness and temporal relationship apply to every category implicitly;
    the flags add occurrence number (short_event), identity, or duration.
    """
    table: dict[str, set[DetailKind]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected `label: flags`")
            label, _, flag_part = line.partition(":")
            label = label.strip().lower()
            if not label:
                raise DataFormatError(f"{path}:{lineno}: empty label")
            details = {DetailKind.TEMPORAL_RELATIONSHIP, DetailKind.LOUDNESS}
            for flag in filter(None, (f.strip() for f in flag_part.split(","))):
                if flag not in _APPLICABILITY_FLAGS:
                    raise DataFormatError(
                        f"{path}:{lineno}: unknown flag {flag!r} "
                        f"(expected one of {sorted(_APPLICABILITY_FLAGS)})"
                    )
                details.add(_APPLICABILITY_FLAGS[flag])
            table[label] = details
    return table


def build_taxonomy(
    records: list[EmbeddingRecord],
    k: int,
    seed: int,
    applicability: dict[str, set[DetailKind]] | None = None,
) -> Taxonomy:
    """Cluster records, label each cluster, and attach applicable details.

    Labels missing from the applicability table get the two universal
    details only (loudness, temporal relationship).
    """
    assignments, centers = kmeans(records, k, seed)
    applicability = applicability or {}
    categories = []
    for j in range(k):
        members = [records[i] for i in range(len(records)) if assignments[i] == j]
        label = representative_label(members, centers[j]).text
        details = set(
            applicability.get(label, {DetailKind.TEMPORAL_RELATIONSHIP, DetailKind.LOUDNESS})
        )
        categories.append(
            EventCategory(
                id=j,
                label=label,
                member_phrases=sorted({m.phrase.text for m in members}),
                is_short_event=DetailKind.OCCURRENCE_NUMBER in details,
                applicable_details=details,
            )
        )
    return Taxonomy(categories=categories, k=k)
