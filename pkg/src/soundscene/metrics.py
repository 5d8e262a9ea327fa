"""Caption fidelity metrics: temporal relation F1, BLEU-4 and per-detail
coverage.

Temporal relations are extracted with a rule parser over the connective
lexicon the captioner itself writes with: "then" / "followed by" /
"before" order adjacent clauses ("after" inverts), "while" / "as" mark
them simultaneous, and the closure propagates order through simultaneity
(if a precedes b and b overlaps c, then a precedes c). Entities are
matched between candidate and reference by shared content tokens.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .caption import DETAIL_KEYWORDS, SceneMetadata, detail_kinds_in_metadata, find_detail_keywords
from .errors import ValidationError
from .taxonomy import DetailKind

_BEFORE_CONNECTIVES = {"then", "followed by", "before"}
_INVERTED_CONNECTIVES = {"after"}
_SIMULTANEOUS_CONNECTIVES = {"while", "as"}

_CONNECTIVE_RE = re.compile(
    r"\s(?:(followed by)|(then)|(while)|(as)|(before)|(after))\s"
)

# Articles plus the detail-surface words; stripped before entity matching.
_STOP_TOKENS = {"a", "an", "the", "another", "once", "twice", "three", "four", "times"}
_STOP_TOKENS.update(DETAIL_KEYWORDS[DetailKind.LOUDNESS])

_PUNCT_RE = re.compile(r"[^\w\s]")


def normalize_mention(text: str) -> str:
    """Lowercase, strip punctuation, drop articles and detail adverbs."""
    tokens = _PUNCT_RE.sub(" ", text.lower()).split()
    return " ".join(t for t in tokens if t not in _STOP_TOKENS)


@dataclass
class TemporalRelationSet:
    """Entities plus ordered (before) and unordered (simultaneous) pairs,
    expressed over entity indices."""

    entities: list[str]
    before_pairs: set[tuple[int, int]] = field(default_factory=set)
    simultaneous_pairs: set[tuple[int, int]] = field(default_factory=set)

    def __post_init__(self):
        self.simultaneous_pairs = {tuple(sorted(p)) for p in self.simultaneous_pairs}
        for a, b in self.before_pairs:
            if a == b:
                raise ValidationError("before pair must relate distinct entities")
            if (b, a) in self.before_pairs:
                raise ValidationError(f"contradictory order between {a} and {b}")
        for a, b in self.simultaneous_pairs:
            if a == b:
                raise ValidationError("simultaneous pair must relate distinct entities")
            if (a, b) in self.before_pairs or (b, a) in self.before_pairs:
                raise ValidationError(f"pair ({a}, {b}) cannot be both ordered and simultaneous")

    def n_pairs(self) -> int:
        return len(self.before_pairs) + len(self.simultaneous_pairs)


def _closure(
    before: set[tuple[int, int]], sim: set[tuple[int, int]]
) -> tuple[set[tuple[int, int]], set[tuple[int, int]]]:
    """Transitive closure where order propagates through simultaneity."""
    before = set(before)
    sim = {tuple(sorted(p)) for p in sim}
    changed = True
    while changed:
        changed = False
        for a, b in list(before):
            for c, d in list(before):
                if b == c and a != d and (a, d) not in before:
                    before.add((a, d))
                    changed = True
            for x, y in list(sim):
                for other, bb in ((y, x), (x, y)):
                    if b == bb and a != other and (a, other) not in before:
                        before.add((a, other))
                        changed = True
        for a, b in list(sim):
            for c, d in list(sim):
                shared = {a, b} & {c, d}
                if len(shared) == 1:
                    pair = tuple(sorted(({a, b} | {c, d}) - shared))
                    if pair[0] != pair[1] and pair not in sim:
                        sim.add(pair)
                        changed = True
        for x, y in list(sim):
            for a, b in list(before):
                for mine, other in ((x, y), (y, x)):
                    if a == mine and b != other and (other, b) not in before:
                        before.add((other, b))
                        changed = True
    return before, sim


def extract_relations(caption: str) -> TemporalRelationSet:
    """Parse a caption into entities and before/simultaneous pairs.

    A caption without connectives yields a single entity and empty sets.
    """
    text = caption.strip().lower()
    if not text:
        return TemporalRelationSet(entities=[])

    clauses: list[str] = []
    connectives: list[str] = []
    pos = 0
    for m in _CONNECTIVE_RE.finditer(" " + text + " "):
        clause = (" " + text + " ")[pos : m.start() + 1].strip()
        if clause:
            clauses.append(clause)
            connectives.append(next(g for g in m.groups() if g))
        pos = m.end() - 1
    tail = (" " + text + " ")[pos:].strip()
    if tail:
        clauses.append(tail)
    elif connectives:
        connectives.pop()

    entities = [normalize_mention(c) for c in clauses]
    before: set[tuple[int, int]] = set()
    sim: set[tuple[int, int]] = set()
    for i, conn in enumerate(connectives[: max(0, len(clauses) - 1)]):
        if conn in _SIMULTANEOUS_CONNECTIVES:
            sim.add((i, i + 1))
        elif conn in _INVERTED_CONNECTIVES:
            before.add((i + 1, i))
        elif conn in _BEFORE_CONNECTIVES:
            before.add((i, i + 1))
    before, sim = _closure(before, sim)
    return TemporalRelationSet(entities=entities, before_pairs=before, simultaneous_pairs=sim)


def relations_from_metadata(meta: SceneMetadata) -> TemporalRelationSet:
    """Ground-truth relation set: earlier groups precede later ones,
    same-group instances are simultaneous."""
    entities = []
    group_of = []
    for g, group in enumerate(meta.groups):
        for record in group:
            entities.append(normalize_mention(record.surface))
            group_of.append(g)
    before = {
        (i, j)
        for i in range(len(entities))
        for j in range(len(entities))
        if group_of[i] < group_of[j]
    }
    sim = {
        (i, j)
        for i in range(len(entities))
        for j in range(i + 1, len(entities))
        if group_of[i] == group_of[j]
    }
    return TemporalRelationSet(entities=entities, before_pairs=before, simultaneous_pairs=sim)


def _match_entities(candidate: TemporalRelationSet, reference: TemporalRelationSet) -> dict[int, int]:
    """Greedy bipartite match on shared content tokens (>= 1 to match);
    ties resolve toward earlier indices on both sides."""
    cand_tokens = [set(e.split()) for e in candidate.entities]
    ref_tokens = [set(e.split()) for e in reference.entities]
    scored = []
    for i, ct in enumerate(cand_tokens):
        for j, rt in enumerate(ref_tokens):
            score = len(ct & rt)
            if score >= 1:
                scored.append((-score, i, j))
    scored.sort()
    mapping: dict[int, int] = {}
    used_refs: set[int] = set()
    for _neg, i, j in scored:
        if i in mapping or j in used_refs:
            continue
        mapping[i] = j
        used_refs.add(j)
    return mapping


def temporal_f1(
    candidate: TemporalRelationSet, reference: TemporalRelationSet
) -> tuple[float, float, float]:
    """Precision, recall and F1 over matched relation pairs.

    A candidate pair counts iff both entities match reference entities and
    the relation type (and direction, for order) agrees. Two empty sets
    score (1, 1, 1); otherwise empty denominators score 0.
    """
    correct, n_cand, n_ref = count_matched_pairs(candidate, reference)
    if n_cand == 0 and n_ref == 0:
        return (1.0, 1.0, 1.0)
    precision = correct / n_cand if n_cand else 0.0
    recall = correct / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return (precision, recall, f1)


def count_matched_pairs(
    candidate: TemporalRelationSet, reference: TemporalRelationSet
) -> tuple[int, int, int]:
    """(correct, candidate pairs, reference pairs) for pooled reporting."""
    mapping = _match_entities(candidate, reference)
    correct = 0
    for a, b in candidate.before_pairs:
        if a in mapping and b in mapping and (mapping[a], mapping[b]) in reference.before_pairs:
            correct += 1
    for a, b in candidate.simultaneous_pairs:
        if a in mapping and b in mapping:
            if tuple(sorted((mapping[a], mapping[b]))) in reference.simultaneous_pairs:
                correct += 1
    return correct, candidate.n_pairs(), reference.n_pairs()


def _tokenize(text: str) -> list[str]:
    return _PUNCT_RE.sub(" ", text.lower()).split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, references: list[str]) -> float:
    """Sentence BLEU with modified n-gram precision up to 4, uniform
    weights and the standard brevity penalty."""
    if not references:
        raise ValueError("bleu4 requires at least one reference")
    cand = _tokenize(candidate)
    refs = [_tokenize(r) for r in references]
    if not cand:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        counts = _ngrams(cand, n)
        total = sum(counts.values())
        if total == 0:
            return 0.0
        clipped = 0
        for ngram, count in counts.items():
            best = max(_ngrams(ref, n)[ngram] for ref in refs)
            clipped += min(count, best)
        if clipped == 0:
            return 0.0
        log_sum += 0.25 * math.log(clipped / total)

    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def detail_coverage(candidate: str, meta: SceneMetadata) -> dict[DetailKind, int]:
    """Per controlled detail present in the metadata: 1 if the caption
    surfaces it via the keyword lexicon, else 0."""
    found = find_detail_keywords(candidate)
    return {kind: int(kind in found) for kind in detail_kinds_in_metadata(meta)}


@dataclass
class MetricReport:
    temporal_precision: float
    temporal_recall: float
    temporal_f1: float
    bleu4: float
    detail_coverage: dict[DetailKind, float] = field(default_factory=dict)
    n_samples: int = 0

    def __post_init__(self):
        p, r = self.temporal_precision, self.temporal_recall
        expect = 2 * p * r / (p + r) if p + r else 0.0
        if abs(self.temporal_f1 - expect) > 1e-9:
            raise ValidationError("temporal_f1 must be the harmonic mean of P and R")
        for v in (p, r, self.temporal_f1, self.bleu4):
            if not 0.0 <= v <= 1.0:
                raise ValidationError("metric values must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "temporal_precision": self.temporal_precision,
            "temporal_recall": self.temporal_recall,
            "temporal_f1": self.temporal_f1,
            "bleu4": self.bleu4,
            "detail_coverage": {k.value: v for k, v in sorted(self.detail_coverage.items())},
            "n_samples": self.n_samples,
        }


@dataclass
class SampleScore:
    """Per-sample raw counts pooled into the report."""

    scene_id: str
    correct: int
    candidate_pairs: int
    reference_pairs: int
    bleu: float
    coverage: dict[DetailKind, int]

    def f1_triple(self) -> tuple[float, float, float]:
        if self.candidate_pairs == 0 and self.reference_pairs == 0:
            return (1.0, 1.0, 1.0)
        p = self.correct / self.candidate_pairs if self.candidate_pairs else 0.0
        r = self.correct / self.reference_pairs if self.reference_pairs else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return (p, r, f)


def aggregate_report(samples: list[SampleScore]) -> MetricReport:
    """Pool pair counts (micro average) so the harmonic-mean invariant
    holds at the report level; BLEU and coverage are averaged."""
    total_correct = sum(s.correct for s in samples)
    total_cand = sum(s.candidate_pairs for s in samples)
    total_ref = sum(s.reference_pairs for s in samples)
    if total_cand == 0 and total_ref == 0:
        p = r = f = 1.0 if samples else 0.0
    else:
        p = total_correct / total_cand if total_cand else 0.0
        r = total_correct / total_ref if total_ref else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
    bleu = sum(s.bleu for s in samples) / len(samples) if samples else 0.0

    coverage: dict[DetailKind, float] = {}
    for kind in DetailKind:
        present = [s.coverage[kind] for s in samples if kind in s.coverage]
        if present:
            coverage[kind] = sum(present) / len(present)

    return MetricReport(
        temporal_precision=p,
        temporal_recall=r,
        temporal_f1=f,
        bleu4=bleu,
        detail_coverage=coverage,
        n_samples=len(samples),
    )
