import copy

import pytest
import requests

from soundscene.caption import (
    CaptionCandidate,
    EventRecord,
    SceneMetadata,
    another_form,
    build_llm_prompt,
    build_metadata,
    detail_kinds_in_metadata,
    find_detail_keywords,
    keyword_detail_filter,
    read_scene_scores,
    similarity_pair_filter,
    template_caption,
)
from soundscene.config import LlmConfig, derive_seed
from soundscene.errors import ValidationError
from soundscene.llm import (
    LlmAuthError,
    LlmClient,
    LlmProtocolError,
    LlmQuotaError,
    LlmTimeoutError,
    llm_paraphrase,
)
from soundscene.render import ClipCache, place_events
from soundscene.sampler import sample_scene
from soundscene.taxonomy import DetailKind


def record(surface="a cat meows", count=1, level="moderate", identity=0, onset=0.0, offset=1.0):
    return EventRecord(
        category=surface.replace("another ", "a "),
        identity_index=identity,
        surface=surface,
        occurrence_count=count,
        loudness_level=level,
        onset_s=onset,
        offset_s=offset,
    )


def meta_of(groups, background=None):
    return SceneMetadata(scene_id="t", groups=groups, background_label=background)


def scene_and_timeline(bank_pool, bank_taxonomy, cfg, seed):
    spec = sample_scene(bank_pool, bank_taxonomy, cfg, seed)
    cache = ClipCache(bank_pool)
    lengths = {
        cid: len(cache.get(cid, spec.sample_rate_hz).samples)
        for e in spec.events
        for cid in e.clip_ids
    }
    return spec, place_events(spec, lengths)


class TestBuildMetadata:
    def test_occurrence_count_carried(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        for seed in range(500):
            spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, seed)
            if any(e.occurrence_count == 2 for e in spec.events):
                meta = build_metadata(spec, tl, scene_id="s")
                assert any(r.occurrence_count == 2 for r in meta.records())
                return
        raise AssertionError("no double-occurrence scene found")

    def test_identity_surfaces_in_onset_order(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        for seed in range(500):
            spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, seed)
            by_cat = {}
            for e in spec.events:
                by_cat[e.category] = by_cat.get(e.category, 0) + 1
            if max(by_cat.values()) < 2:
                continue
            meta = build_metadata(spec, tl, scene_id="s")
            repeated = [c for c, n in by_cat.items() if n >= 2][0]
            records = sorted(
                (r for r in meta.records() if r.category == repeated),
                key=lambda r: r.onset_s,
            )
            assert records[0].identity_index == 0
            assert not records[0].surface.startswith("another")
            assert records[1].identity_index == 1
            assert records[1].surface.startswith("another")
            return
        raise AssertionError("no identity-repeat scene found")

    def test_onsets_match_timeline_within_1ms(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, 11)
        meta = build_metadata(spec, tl)
        rate = spec.sample_rate_hz
        for rec in meta.records():
            spans = [
                (p.onset_sample / rate, p.end_sample / rate)
                for p in tl.placements
                if p.event_ref[0] == rec.category
            ]
            assert any(abs(rec.onset_s - a) < 1e-3 for a, _ in spans)
            assert any(abs(rec.offset_s - b) < 1e-3 for _, b in spans)

    def test_no_background_is_none(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        cfg.sampler.p_background = 0.0
        spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, 3)
        meta = build_metadata(spec, tl, background_label="rain falling")
        assert meta.background_label is None

    def test_spec_timeline_mismatch_rejected(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, 11)
        broken = copy.deepcopy(tl)
        broken.placements.pop()
        with pytest.raises(ValidationError):
            build_metadata(spec, broken)

    def test_round_trip_serialization(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, 11)
        meta = build_metadata(spec, tl, scene_id="s", config_hash="h")
        again = SceneMetadata.from_dict(meta.to_dict())
        assert again.to_json() == meta.to_json()


class TestAnotherForm:
    def test_article_swaps(self):
        assert another_form("a man speaks") == "another man speaks"
        assert another_form("an owl hoots") == "another owl hoots"
        assert another_form("water running") == "another water running"


class TestTemplateCaption:
    def test_count_and_loudness_rendered(self):
        meta = meta_of([[record("a gun fires", count=3, level="loud")]])
        assert template_caption(meta, 0).text == "a gun fires loudly three times"

    def test_two_groups_with_overlap(self):
        meta = meta_of(
            [
                [record("a man speaks")],
                [record("another man speaks", identity=1), record("a woman laughs")],
            ]
        )
        assert (
            template_caption(meta, 1).text
            == "a man speaks followed by another man speaks while a woman laughs"
        )

    def test_bare_clause_when_no_details(self):
        meta = meta_of([[record("a cat meows")]])
        assert template_caption(meta, 0).text == "a cat meows"

    def test_background_appended(self):
        meta = meta_of([[record("a cat meows", count=2)]], background="rain falling")
        assert (
            template_caption(meta, 0).text
            == "a cat meows twice with rain falling in the background"
        )

    def test_each_instance_mentioned_once(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        for seed in range(100):
            spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, seed)
            meta = build_metadata(spec, tl)
            text = template_caption(meta, derive_seed(seed, "caption")).text
            for rec in meta.records():
                assert text.count(rec.surface) == 1

    def test_deterministic(self):
        meta = meta_of([[record("a gun fires", count=4)], [record("water running")]])
        assert template_caption(meta, 7).text == template_caption(meta, 7).text


class TestDetailKeywords:
    def test_lexicon_hits(self):
        found = find_detail_keywords("a gun fires loudly three times then another gun")
        assert found == {
            DetailKind.LOUDNESS,
            DetailKind.OCCURRENCE_NUMBER,
            DetailKind.TEMPORAL_RELATIONSHIP,
            DetailKind.IDENTITY,
        }

    def test_word_boundaries(self):
        assert find_detail_keywords("thunder aloud") == set()
        assert find_detail_keywords("it is loud") == {DetailKind.LOUDNESS}

    def test_kinds_in_metadata(self):
        meta = meta_of(
            [
                [record("a cat meows", count=2, level="quiet")],
                [record("another man speaks", identity=1)],
            ]
        )
        assert detail_kinds_in_metadata(meta) == {
            DetailKind.OCCURRENCE_NUMBER,
            DetailKind.LOUDNESS,
            DetailKind.IDENTITY,
            DetailKind.TEMPORAL_RELATIONSHIP,
        }
        bare = meta_of([[record("a cat meows")]])
        assert detail_kinds_in_metadata(bare) == set()


class TestKeywordFilter:
    def test_surfaced_detail_passes(self):
        meta = meta_of([[record("a cat meows", count=2)]])
        assert keyword_detail_filter(CaptionCandidate("a cat meows twice", "llm"), meta)

    def test_missing_detail_fails(self):
        meta = meta_of([[record("a cat meows", count=2)]])
        assert not keyword_detail_filter(CaptionCandidate("a cat meows", "llm"), meta)

    def test_detail_free_meta_vacuous(self):
        meta = meta_of([[record("a cat meows")]])
        assert keyword_detail_filter(CaptionCandidate("anything at all", "llm"), meta)

    def test_template_always_passes(self, bank_pool, bank_taxonomy, bank_config):
        cfg = copy.deepcopy(bank_config)
        for seed in range(200):
            spec, tl = scene_and_timeline(bank_pool, bank_taxonomy, cfg, seed)
            meta = build_metadata(spec, tl, background_label="rain falling")
            cand = template_caption(meta, derive_seed(seed, "caption"))
            assert keyword_detail_filter(cand, meta)


class TestSimilarityPairFilter:
    def test_threshold_and_missing(self):
        candidates = [
            ("s1", CaptionCandidate("a", "llm")),
            ("s2", CaptionCandidate("b", "llm")),
            ("s3", CaptionCandidate("c", "llm")),
        ]
        kept = similarity_pair_filter(candidates, {"s1": 0.2, "s2": 0.4}, 0.3)
        assert [sid for sid, _ in kept] == ["s2"]
        assert kept[0][1].similarity_score == 0.4

    def test_zero_threshold_keeps_scored(self):
        candidates = [("s1", CaptionCandidate("a", "llm"))]
        assert len(similarity_pair_filter(candidates, {"s1": 0.0}, 0.0)) == 1

    def test_empty_input(self):
        assert similarity_pair_filter([], {}, 0.3) == []

    def test_scores_file(self, tmp_path):
        path = tmp_path / "scores.tsv"
        path.write_text("scene_000000\t0.91\nscene_000001\t0.11\n", encoding="utf-8")
        assert read_scene_scores(path) == {"scene_000000": 0.91, "scene_000001": 0.11}


class TestLlmPrompt:
    def test_mentions_required_count_word(self):
        meta = meta_of([[record("a cat meows", count=2)]])
        prompt = build_llm_prompt(meta)
        assert "twice" in prompt

    def test_byte_stable(self):
        meta = meta_of([[record("a gun fires", count=3)]])
        assert build_llm_prompt(meta) == build_llm_prompt(meta)

    def test_forbids_invented_details(self):
        prompt = build_llm_prompt(meta_of([[record("a cat meows")]]))
        assert "do not invent" in prompt


class FakeResponse:
    def __init__(self, status_code=200, payload=None, invalid_json=False):
        self.status_code = status_code
        self._payload = payload
        self._invalid = invalid_json

    def json(self):
        if self._invalid:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    """Scripted responses; an entry may be an Exception to raise."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        action = self.script.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


def llm_config(**kw):
    defaults = dict(base_url="http://fake", model="m1", backoff_s=0.01, max_attempts=3)
    defaults.update(kw)
    return LlmConfig(**defaults)


class TestLlmClient:
    def test_success_first_try(self):
        session = FakeSession([FakeResponse(200, {"caption": "a dog barks twice"})])
        cand = llm_paraphrase("prompt", llm_config(), session=session)
        assert cand.text == "a dog barks twice"
        assert cand.origin == "llm"
        assert DetailKind.OCCURRENCE_NUMBER in cand.detail_keywords_found
        assert session.calls[0]["url"] == "http://fake/caption"

    def test_retries_with_exponential_backoff(self):
        sleeps = []
        session = FakeSession(
            [
                requests.ConnectionError("down"),
                requests.Timeout("slow"),
                FakeResponse(200, {"caption": "ok then"}),
            ]
        )
        client = LlmClient(llm_config(backoff_s=0.5), session=session, sleep=sleeps.append)
        assert client.complete("p") == "ok then"
        assert sleeps == [0.5, 1.0]

    def test_timeout_after_all_attempts(self):
        session = FakeSession([requests.Timeout("slow")] * 3)
        client = LlmClient(llm_config(), session=session, sleep=lambda s: None)
        with pytest.raises(LlmTimeoutError) as err:
            client.complete("p")
        assert err.value.attempts == 3

    def test_auth_error_not_retried(self):
        session = FakeSession([FakeResponse(401)])
        client = LlmClient(llm_config(), session=session, sleep=lambda s: None)
        with pytest.raises(LlmAuthError):
            client.complete("p")
        assert len(session.calls) == 1

    def test_quota_exhaustion(self):
        session = FakeSession([FakeResponse(429)] * 3)
        client = LlmClient(llm_config(), session=session, sleep=lambda s: None)
        with pytest.raises(LlmQuotaError):
            client.complete("p")

    def test_malformed_reply_is_protocol_error(self):
        session = FakeSession([FakeResponse(200, invalid_json=True)])
        client = LlmClient(llm_config(), session=session, sleep=lambda s: None)
        with pytest.raises(LlmProtocolError):
            client.complete("p")

    def test_missing_caption_key(self):
        session = FakeSession([FakeResponse(200, {"text": "nope"})])
        client = LlmClient(llm_config(), session=session, sleep=lambda s: None)
        with pytest.raises(LlmProtocolError):
            client.complete("p")

    def test_auth_header_from_env(self, monkeypatch):
        monkeypatch.setenv("SOUNDSCENE_LLM_TOKEN", "sekrit")
        session = FakeSession([FakeResponse(200, {"caption": "hi there"})])
        LlmClient(llm_config(), session=session).complete("p")
        assert session.calls[0]["headers"]["Authorization"] == "Bearer sekrit"
