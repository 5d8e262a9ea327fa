"""Command-line pipeline: taxonomy -> pool -> simulate -> eval.

Every subcommand takes --config / --seed / --out; identical config and
seed produce an identical output tree. Progress goes to stderr, data only
to files. Exit codes: 0 ok, 1 usage, 2 data error, 3 infeasible scene.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import caption as cap
from . import metrics, pool, render, sampler, taxonomy
from .config import PipelineConfig, derive_seed, load_config
from .errors import DataFormatError, InfeasibleError, SoundSceneError, ValidationError
from .llm import LlmClient, LlmError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit(1)
        raise UsageError(message)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_files(*paths) -> None:
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise UsageError(f"missing input file(s): {', '.join(missing)}")


def _load_config(args) -> PipelineConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def cmd_taxonomy(args) -> int:
    cfg = _load_config(args)
    _require_files(cfg.taxonomy.corpus, cfg.taxonomy.embeddings, cfg.taxonomy.applicability)

    corpus_lines = Path(cfg.taxonomy.corpus).read_text(encoding="utf-8").splitlines()
    phrases: dict[str, taxonomy.EventPhrase] = {}
    for i, line in enumerate(corpus_lines):
        for phrase in taxonomy.extract_event_phrases(line, caption_id=f"line{i + 1}"):
            phrases.setdefault(phrase.text, phrase)
    if not phrases:
        raise DataFormatError(f"{cfg.taxonomy.corpus}: empty corpus, no phrases extracted")

    embeddings = {r.phrase.text: r for r in taxonomy.load_embeddings(cfg.taxonomy.embeddings)}
    records = [embeddings[t] for t in sorted(phrases) if t in embeddings]
    skipped = len(phrases) - len(records)
    if skipped:
        _info(f"taxonomy: {skipped} phrase(s) lack embeddings and were skipped")
    if not records:
        raise DataFormatError("no corpus phrase has an embedding")

    k = args.k if args.k is not None else cfg.taxonomy.k
    try:
        applic = taxonomy.load_applicability_table(cfg.taxonomy.applicability)
        result = taxonomy.build_taxonomy(records, k, cfg.master_seed, applic)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc

    out = Path(args.out) if args.out else Path(cfg.taxonomy.taxonomy_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.save(out)

    sizes = sorted((len(c.member_phrases) for c in result.categories), reverse=True)
    _info(f"taxonomy: {len(records)} phrases -> {k} categories at {out}")
    _info("cluster sizes: " + " ".join(str(s) for s in sizes))
    return EXIT_OK


def cmd_pool(args) -> int:
    cfg = _load_config(args)
    _require_files(cfg.pool.clips, cfg.taxonomy.taxonomy_file)
    tax = taxonomy.Taxonomy.load(cfg.taxonomy.taxonomy_file)

    clips = pool.read_clip_table(cfg.pool.clips)
    readable = []
    for clip in clips:
        path = Path(clip.audio_path)
        problem = None
        if not path.is_file():
            problem = "file not found"
        elif args.verify_audio:
            try:
                from .audio import load_wav

                load_wav(path)
            except DataFormatError as exc:
                problem = str(exc)
        if problem:
            _info(f"pool: skipping unreadable clip {clip.id}: {problem}")
        else:
            readable.append(clip)

    activity = (
        pool.read_activity_sidecar(cfg.pool.activity)
        if Path(cfg.pool.activity).is_file()
        else {}
    )
    similarity = (
        pool.read_similarity_sidecar(cfg.pool.similarity)
        if Path(cfg.pool.similarity).is_file()
        else {}
    )

    manifest, counts = pool.curate(
        readable,
        tax,
        min_duration_s=cfg.pool.min_duration_s,
        max_duration_s=cfg.pool.max_duration_s,
        max_nontarget_ratio=cfg.pool.max_nontarget_ratio,
        min_segment_s=cfg.pool.min_segment_s,
        similarity_threshold=cfg.pool.similarity_threshold,
        similarity=similarity,
        activity=activity,
        skip_activity=args.skip_activity,
    )
    out = Path(args.out) if args.out else Path(cfg.pool.manifest_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(out)

    counts["unreadable"] = len(clips) - len(readable)
    for stage, value in counts.items():
        _info(f"pool: {stage} = {value}")
    _info(f"pool: manifest with {len(manifest.clips)} clips at {out}")
    return EXIT_OK


def _caption_scene(spec, meta, cfg, llm_client):
    """Template caption always (it is the reference); LLM paraphrase on top
    when configured, falling back to the template on typed LLM failures."""
    template = cap.template_caption(meta, derive_seed(spec.seed, "caption"))
    candidate = template
    if cfg.caption.mode == "llm" and llm_client is not None:
        prompt = cap.build_llm_prompt(meta)
        try:
            text = llm_client.complete(prompt)
            candidate = cap.CaptionCandidate(
                text=text, origin="llm", detail_keywords_found=cap.find_detail_keywords(text)
            )
        except LlmError as exc:
            _info(f"simulate: llm failed for {meta.scene_id} ({exc}); using template")
    return template, candidate


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    _require_files(cfg.taxonomy.taxonomy_file, cfg.pool.manifest_file)
    tax = taxonomy.Taxonomy.load(cfg.taxonomy.taxonomy_file)
    manifest = pool.PoolManifest.load(cfg.pool.manifest_file)
    out_dir = Path(args.out or "out")

    # Sample and validate every scene before touching audio or disk.
    specs = []
    for i in range(args.count):
        seed_i = derive_seed(cfg.master_seed, f"scene:{i}")
        spec = sampler.sample_scene(manifest, tax, cfg, seed_i)
        violations = sampler.validate_scene(spec, manifest)
        if violations:
            raise ValidationError(f"scene {i}: " + "; ".join(violations))
        specs.append(spec)

    if args.dry_run:
        for i, spec in enumerate(specs):
            print(f"scene_{i:06d} " + json.dumps(spec.to_dict(), sort_keys=True))
        _info(f"simulate: dry run, {len(specs)} scene spec(s) printed")
        return EXIT_OK

    scores = None
    scores_path = args.similarity_scores or cfg.caption.similarity_scores
    if scores_path:
        scores = cap.read_scene_scores(scores_path)

    llm_client = None
    if cfg.caption.mode == "llm":
        llm_client = LlmClient(cfg.caption.llm)

    cache = render.ClipCache(manifest)
    config_hash = cfg.config_hash()
    bg_label = {c.id: c.category for c in manifest.clips}

    def scene_job(i: int) -> dict:
        spec = specs[i]
        scene_id = f"scene_{i:06d}"
        rate = spec.sample_rate_hz
        lengths = {
            cid: len(cache.get(cid, rate).samples)
            for e in spec.events
            for cid in e.clip_ids
        }
        timeline = render.place_events(spec, lengths)
        meta = cap.build_metadata(
            spec,
            timeline,
            scene_id=scene_id,
            config_hash=config_hash,
            background_label=bg_label.get(spec.background.clip_id)
            if spec.background.present
            else None,
        )
        template, candidate = _caption_scene(spec, meta, cfg, llm_client)

        keyword_ok = (
            cap.keyword_detail_filter(candidate, meta) if cfg.caption.keyword_filter else True
        )
        similarity_ok = None
        if scores is not None:
            score = scores.get(scene_id)
            candidate.similarity_score = score
            similarity_ok = score is not None and score >= cfg.caption.similarity_threshold
        kept = keyword_ok and (similarity_ok is not False)

        row = {
            "scene_id": scene_id,
            "kept": kept,
            "filters": {"keyword": keyword_ok, "similarity": similarity_ok},
        }
        if not kept and not args.keep_rejected:
            return row

        scene_dir = out_dir / scene_id
        if scene_dir.exists():
            shutil.rmtree(scene_dir)
        scene_dir.mkdir(parents=True)

        result = render.render_scene(spec, manifest, cache=cache)
        from .audio import write_wav

        write_wav(result.buffer, scene_dir / f"{scene_id}.wav")
        spec.save(scene_dir / f"{scene_id}.spec.json")
        meta.save(scene_dir / f"{scene_id}.metadata.json")
        _write_json(scene_dir / f"{scene_id}.render.json", result.log(spec))
        _write_json(
            scene_dir / f"{scene_id}.pair.json",
            {
                "scene_id": scene_id,
                "audio": f"{scene_id}/{scene_id}.wav",
                "metadata": meta.to_dict(),
                "captions": [candidate.to_dict()],
                "reference_captions": [template.text],
                "filters": row["filters"],
                "kept": kept,
            },
        )
        return row

    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = max(1, args.jobs)
    if specs:
        if jobs == 1:
            rows = [scene_job(i) for i in range(len(specs))]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
                rows = list(pool_exec.map(scene_job, range(len(specs))))
    else:
        rows = []

    summary = {
        "requested": args.count,
        "kept": sum(1 for r in rows if r["kept"]),
        "dropped_keyword": sum(1 for r in rows if not r["filters"]["keyword"]),
        "dropped_similarity": sum(1 for r in rows if r["filters"]["similarity"] is False),
        "scenes": rows,
    }
    _write_json(out_dir / "summary.json", summary)
    _info(f"simulate: kept {summary['kept']}/{args.count} scene(s) under {out_dir}")
    return EXIT_OK


def _eval_pairs(pairs_dir: Path):
    records = sorted(pairs_dir.glob("*/*.pair.json"))
    if not records:
        raise DataFormatError(f"no pair records under {pairs_dir}")
    samples = []
    for path in records:
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            meta = cap.SceneMetadata.from_dict(doc["metadata"])
            text = doc["captions"][0]["text"]
            refs = doc.get("reference_captions") or [text]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise DataFormatError(f"bad pair record {path}: {exc}") from exc
        correct, n_cand, n_ref = metrics.count_matched_pairs(
            metrics.extract_relations(text), metrics.relations_from_metadata(meta)
        )
        samples.append(
            metrics.SampleScore(
                scene_id=doc.get("scene_id", path.stem),
                correct=correct,
                candidate_pairs=n_cand,
                reference_pairs=n_ref,
                bleu=metrics.bleu4(text, refs),
                coverage=metrics.detail_coverage(text, meta),
            )
        )
    return samples


def _eval_text_files(cand_path: Path, ref_path: Path):
    candidates = cand_path.read_text(encoding="utf-8").splitlines()
    references = ref_path.read_text(encoding="utf-8").splitlines()
    if not candidates or all(not c.strip() for c in candidates):
        raise DataFormatError(f"{cand_path}: no candidate captions")
    if len(candidates) != len(references):
        raise DataFormatError(
            f"candidate/reference line counts differ: {len(candidates)} vs {len(references)}"
        )
    samples = []
    for i, (cand, ref) in enumerate(zip(candidates, references)):
        correct, n_cand, n_ref = metrics.count_matched_pairs(
            metrics.extract_relations(cand), metrics.extract_relations(ref)
        )
        samples.append(
            metrics.SampleScore(
                scene_id=f"line{i + 1}",
                correct=correct,
                candidate_pairs=n_cand,
                reference_pairs=n_ref,
                bleu=metrics.bleu4(cand, [ref]),
                coverage={},
            )
        )
    return samples


def cmd_eval(args) -> int:
    if bool(args.pairs) == bool(args.candidates):
        raise UsageError("exactly one of --pairs or --candidates/--references is required")
    if args.candidates and not args.references:
        raise UsageError("--references is required with --candidates")

    if args.pairs:
        samples = _eval_pairs(Path(args.pairs))
    else:
        _require_files(args.candidates, args.references)
        samples = _eval_text_files(Path(args.candidates), Path(args.references))

    report = metrics.aggregate_report(samples)
    out = Path(args.out or "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report.to_dict())

    if args.per_sample:
        lines = ["scene_id\tcorrect\tcandidate_pairs\treference_pairs\tf1\tbleu4"]
        for s in samples:
            f1 = s.f1_triple()[2]
            lines.append(
                f"{s.scene_id}\t{s.correct}\t{s.candidate_pairs}\t{s.reference_pairs}"
                f"\t{f1:.6f}\t{s.bleu:.6f}"
            )
        Path(args.per_sample).write_text("\n".join(lines) + "\n", encoding="utf-8")

    _info(
        f"eval: {report.n_samples} sample(s), temporal F1 {report.temporal_f1:.4f}, "
        f"BLEU-4 {report.bleu4:.4f} -> {out}"
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="soundscene", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", default=None, help="output path")

    p = sub.add_parser("taxonomy", help="cluster corpus phrases into categories")
    common(p)
    p.add_argument("--k", type=int, default=None, help="cluster count (default from config)")
    p.set_defaults(func=cmd_taxonomy)

    p = sub.add_parser("pool", help="curate the single-event clip pool")
    common(p)
    p.add_argument("--skip-activity", action="store_true", help="bypass the activity stage")
    p.add_argument("--verify-audio", action="store_true", help="decode every clip up front")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("simulate", help="sample, render and caption scenes")
    common(p)
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--jobs", type=int, default=1, help="parallel scene workers")
    p.add_argument("--dry-run", action="store_true", help="print specs, write nothing")
    p.add_argument(
        "--keep-rejected", action="store_true", help="write scenes that fail the filters"
    )
    p.add_argument(
        "--similarity-scores", default=None, help="per-scene score file for the pair filter"
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score captions against references or metadata")
    common(p)
    p.add_argument("--pairs", default=None, help="directory of simulate output")
    p.add_argument("--candidates", default=None, help="candidate captions, one per line")
    p.add_argument("--references", default=None, help="reference captions, one per line")
    p.add_argument("--per-sample", default=None, help="write per-sample TSV here")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataFormatError, ValidationError, LlmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SoundSceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
