"""Command-line entry points for the synthesis pipeline and its tooling.

Commands mirror the pipeline stages; every stage can also run standalone on
persisted intermediates, and ``synthesize`` chains them end to end. With
``--mock-scorer`` the whole pipeline runs offline against the deterministic
world model (same seed, same bytes).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import dataio, distill, metrics, pipeline, prompts
from .core import EvchainError, QASample, match_option
from .dataio import PipelineConfig
from .metrics import GroundedPrediction, chain_to_window, evaluate_gqa, parse_spans
from .pool import build_pool
from .pipeline import SampleOutcome, build_scorer, run_synthesis
from .search import SearchTrace, beam_search, pool_as_chain, refine_pool
from .segmenter import segment_video

log = logging.getLogger("evchain")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="pipeline config file (YAML)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--ablation", choices=["hier", "search", "multihop"],
                   help="run one pipeline ablation")
    p.add_argument("--mock-scorer", action="store_true",
                   help="use the offline deterministic scorer")
    p.add_argument("--endpoint", help="remote scorer endpoint URL")
    p.add_argument("--model", help="remote scorer model name")
    p.add_argument("--cache-dir", help="response cache directory")
    p.add_argument("--workers", type=int, help="worker pool size")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.ablation == "hier":
        cfg.hier_off = True
    elif args.ablation == "search":
        cfg.search_off = True
    elif args.ablation == "multihop":
        cfg.multihop_off = True
    if getattr(args, "endpoint", None):
        cfg.scorer.endpoint = args.endpoint
    if getattr(args, "model", None):
        cfg.scorer.model = args.model
    if getattr(args, "cache_dir", None):
        cfg.cache_dir = args.cache_dir
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _load_dataset(path) -> dataio.LoadResult:
    loaded = dataio.load_qa_dataset(path)
    for reject in loaded.rejects:
        log.warning("rejected row: %s", reject)
    if not loaded.samples:
        log.warning("dataset %s contains no valid samples", path)
    return loaded


def _scorer(cfg: PipelineConfig, samples, args):
    return build_scorer(cfg, samples, mock=args.mock_scorer)


# ---------------------------------------------------------------------------
# Stage writers (shared by stage commands and synthesize for byte-identity)
# ---------------------------------------------------------------------------


def _write_segments(path, outcomes, cfg):
    rows = [row for o in outcomes for row in dataio.segment_rows(o.sample, o.segments)]
    return dataio.write_records(path, rows, cfg.config_hash())


def _write_pool(path, outcomes, cfg, refined=False):
    rows = []
    for o in outcomes:
        pool = o.refined if refined else o.pool
        if pool is not None:
            rows.extend(dataio.segment_rows(o.sample, pool.segments, refined=refined))
    return dataio.write_records(path, rows, cfg.config_hash())


def _write_chains(path, trace_path, outcomes, cfg):
    rows = [dataio.chain_row(o.sample, o.chain) for o in outcomes if o.chain is not None]
    dataio.write_records(path, rows, cfg.config_hash())
    trace_rows = []
    for o in outcomes:
        if o.trace is None:
            continue
        for rec in o.trace.records:
            trace_rows.append({"sample_id": o.sample.sample_id, **rec})
    dataio.write_records(trace_path, trace_rows, cfg.config_hash())


def _write_distilled(path, result, cfg):
    rows = [dataio.distilled_row(rec) for rec in result.records]
    if result.interrupted:
        rows.append({"truncated": True, "reason": "interrupted"})
        return dataio.write_records(path, rows, cfg.config_hash())
    return dataio.write_distilled(path, rows, cfg.config_hash())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_segment(args) -> int:
    cfg = _config(args)
    loaded = _load_dataset(args.dataset)
    outcomes = []
    for sample in loaded.samples:
        o = SampleOutcome(sample=sample)
        o.segments = segment_video(sample.video, cfg.effective_hierarchy(),
                                   owner_id=sample.sample_id)
        outcomes.append(o)
    n = _write_segments(args.out, outcomes, cfg)
    print(f"wrote {n} segments for {len(outcomes)} samples -> {args.out}")
    return 0


def _outcomes_from_stage(loaded, rows, build):
    by_sample = dataio.segments_by_sample(rows)
    outcomes = []
    for sample in loaded.samples:
        segs = by_sample.get(sample.sample_id)
        if segs is None:
            raise EvchainError(f"sample {sample.sample_id} missing from stage input")
        outcomes.append(build(sample, segs))
    return outcomes


def cmd_build_pool(args) -> int:
    cfg = _config(args)
    loaded = _load_dataset(args.dataset)
    scorer = _scorer(cfg, loaded.samples, args)
    _, rows = dataio.read_records(args.segments)

    def build(sample, segs):
        o = SampleOutcome(sample=sample)
        o.pool = build_pool(sample, segs, scorer, min_pool_size=cfg.min_pool_size,
                            max_attempts=cfg.max_attempts, stats=o.pool_stats)
        return o

    outcomes = _outcomes_from_stage(loaded, rows, build)
    n = _write_pool(args.out, outcomes, cfg)
    print(f"wrote {n} captioned segments -> {args.out}")
    return 0


def cmd_refine(args) -> int:
    cfg = _config(args)
    loaded = _load_dataset(args.dataset)
    scorer = _scorer(cfg, loaded.samples, args)
    _, rows = dataio.read_records(args.pool)

    def build(sample, segs):
        o = SampleOutcome(sample=sample)
        pool = dataio.pool_from_rows(sample.sample_id, segs, refined=False)
        o.refined = refine_pool(pool, sample, scorer, k=cfg.search.K,
                                max_attempts=cfg.max_attempts)
        return o

    outcomes = _outcomes_from_stage(loaded, rows, build)
    n = _write_pool(args.out, outcomes, cfg, refined=True)
    print(f"wrote {n} refined segments -> {args.out}")
    return 0


def cmd_search(args) -> int:
    cfg = _config(args)
    loaded = _load_dataset(args.dataset)
    scorer = _scorer(cfg, loaded.samples, args)
    _, rows = dataio.read_records(args.refined)

    def build(sample, segs):
        o = SampleOutcome(sample=sample)
        refined = dataio.pool_from_rows(sample.sample_id, segs, refined=True)
        if cfg.search_off:
            o.chain = pool_as_chain(refined, sample, scorer)
            o.trace = SearchTrace()
        else:
            o.chain, o.trace = beam_search(refined, sample, scorer, cfg.effective_search())
        return o

    outcomes = _outcomes_from_stage(loaded, rows, build)
    _write_chains(args.out, args.trace, outcomes, cfg)
    print(f"wrote {len(outcomes)} chains -> {args.out}")
    return 0


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    loaded = _load_dataset(args.dataset)
    scorer = _scorer(cfg, loaded.samples, args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.from_chains:
        _, rows = dataio.read_records(args.from_chains)
        chains = {row["sample_id"]: dataio.chain_from_row(row) for row in rows}
        outcomes = []
        for sample in loaded.samples:
            if sample.sample_id not in chains:
                raise EvchainError(f"sample {sample.sample_id} missing from {args.from_chains}")
            chain = chains[sample.sample_id]
            o = SampleOutcome(sample=sample)
            o.chain = chain
            o.cot_text, o.predicted_idx = distill.summarize_chain(
                chain, sample, scorer, max_attempts=cfg.max_attempts)
            context = (prompts.chain_transcript(chain, sample.video.duration_s)
                       if cfg.filter_on == "chain" else o.cot_text)
            verdict = distill.filter_chain(context, sample, scorer)
            o.filter_passed = verdict.passed
            o.records = distill.emit_training_samples(
                sample, chain, o.cot_text, cfg.emission_modes, passed_filter=verdict.passed)
            if not verdict.passed:
                o.status = "filtered"
            outcomes.append(o)
        result = pipeline.RunResult(outcomes=outcomes, records=[r for o in outcomes
                                                                for r in o.records],
                                    load_rejects=loaded.rejects)
    else:
        result = run_synthesis(loaded.samples, cfg, scorer,
                               keep_going=args.keep_going, rejects=loaded.rejects)
        done = [o for o in result.outcomes if o.status != "failed"]
        _write_segments(out_dir / "segments.jsonl", done, cfg)
        _write_pool(out_dir / "pool.jsonl", done, cfg)
        _write_pool(out_dir / "refined.jsonl", done, cfg, refined=True)
        _write_chains(out_dir / "chains.jsonl", out_dir / "trace.jsonl", done, cfg)

    _write_distilled(out_dir / "distilled.jsonl", result, cfg)
    dataio.write_records(out_dir / "rejects.jsonl", result.all_rejects(), cfg.config_hash())
    report = result.report()
    dataio.write_records(out_dir / "report.jsonl", [report], cfg.config_hash())
    for key, value in report.items():
        print(f"{key:>18}: {value}")
    if result.interrupted:
        print("run interrupted; outputs carry a truncation marker", file=sys.stderr)
        return 130
    return 0


def _predicted_answer(row: dict, gold: QASample):
    if "answer_idx" in row and row["answer_idx"] is not None:
        return int(row["answer_idx"])
    idx = match_option(str(row.get("answer_text", "")), gold.options)
    if idx is None:
        idx = match_option(str(row.get("raw_text", "")), gold.options)
    return idx if idx is not None else -1


def cmd_evaluate_gqa(args) -> int:
    cfg = _config(args)
    gold = _load_dataset(args.gold).samples
    gold_by_id = {s.sample_id: s for s in gold}
    rows = dataio.read_loose_records(args.predictions)
    predictions = []
    for row in rows:
        sid = row.get("sample_id")
        g = gold_by_id.get(sid)
        if g is None:
            raise EvchainError(f"prediction for unknown sample {sid!r}")
        spans = parse_spans(str(row.get("raw_text", "")), duration_s=g.video.duration_s)
        window = None
        if spans:
            window = chain_to_window(spans, policy=args.window_policy or cfg.window_policy)
        predictions.append(GroundedPrediction(
            sample_id=sid,
            predicted_answer_idx=_predicted_answer(row, g),
            predicted_window=window,
            source=str(row.get("raw_text", "")),
        ))
    report = evaluate_gqa(predictions, gold)
    if args.out:
        rows_out = [report.as_dict()] + [
            {"sample_id": r.sample_id, "correct": r.correct, "iop": r.iop,
             "iou": r.iou, "has_window": r.has_window}
            for r in report.rows
        ]
        dataio.write_records(args.out, rows_out, cfg.config_hash())
    width = max(len(k) for k in report.as_dict())
    for key, value in report.as_dict().items():
        shown = f"{value:.4f}" if isinstance(value, float) else value
        print(f"{key:>{width}}  {shown}")
    return 0


def cmd_report(args) -> int:
    _, rows = dataio.read_distilled(args.distilled)
    records = [dataio.distilled_from_row(r) for r in rows if "truncated" not in r]
    hist = distill.hop_histogram(records)
    modes = {}
    for r in records:
        modes[r.target_mode] = modes.get(r.target_mode, 0) + 1
    print(f"records: {len(records)}")
    print(f"samples: {len({r.sample_id for r in records})}")
    print("target modes: " + ", ".join(f"{k}={v}" for k, v in sorted(modes.items())))
    print("hops histogram:")
    for hops in sorted(hist):
        print(f"  {hops:>3} hops  {hist[hops]:>5}  {'#' * hist[hops]}")
    return 0


def cmd_serve_review(args) -> int:
    import uvicorn

    from .review import create_app

    app = create_app(args.distilled, args.scores, ui_dir=args.ui, dataset_path=args.dataset)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evchain",
        description="Evidence-chain synthesis and grounded-QA evaluation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment videos across hierarchy levels")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("build-pool", help="caption segments into an evidence pool")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("refine", help="narrow each pool to the top-K candidates")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("search", help="beam-search evidence chains")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--refined", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("synthesize", help="full pipeline: dataset -> distilled records")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--from-chains", help="start from a persisted chains file")
    p.add_argument("--keep-going", action="store_true",
                   help="turn per-sample failures into reject records")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate-gqa", help="grounded-QA metrics for predictions")
    _add_common(p)
    p.add_argument("--gold", required=True, help="gold dataset with gt windows")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out")
    p.add_argument("--window-policy", choices=list(metrics.WINDOW_POLICIES))
    p.set_defaults(func=cmd_evaluate_gqa)

    p = sub.add_parser("report", help="summarize a distilled dataset")
    p.add_argument("--distilled", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve-review", help="serve chains for human annotation")
    p.add_argument("--distilled", required=True)
    p.add_argument("--scores", required=True, help="score store file (JSONL, appended)")
    p.add_argument("--dataset", help="source dataset, joins video URIs into chain views")
    p.add_argument("--ui", help="directory of built UI assets to serve")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve_review)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EvchainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
