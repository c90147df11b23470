"""Command line entry point: ``owg {ground,trial,bench,eval-ground,record,embed-rank}``.

Exit codes: 0 ok, 2 usage, 3 backend error, 4 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

from .errors import BackendError, DataError
from .executor import ExecutorConfig, run_trial
from .vlm import RecordingBackend, ScriptedBackend, TranscriptStore, parse_backend

log = logging.getLogger("owg")

EXIT_OK, EXIT_USAGE, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _add_backend(p, default=None, extra=""):
    p.add_argument("--backend", default=default, required=default is None,
                   help="remote | replay:FILE | scripted:FILE" + extra)
    p.add_argument("--endpoint", default=os.environ.get("OWG_ENDPOINT"),
                   help="chat-completions URL for the remote backend")


def _add_config(p):
    p.add_argument("--k", type=int, default=None, help="self-consistency samples (default 5)")
    p.add_argument("--templates", default=None, help="prompt template directory")
    p.add_argument("--no-reference", action="store_true")
    p.add_argument("--no-ids", action="store_true")
    p.add_argument("--no-fill", action="store_true")
    p.add_argument("--boxes", action="store_true")
    p.add_argument("--no-highres", action="store_true")


def _config(args, **extra):
    try:
        return _build_config(args, **extra)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _build_config(args, **extra):
    cfg = ExecutorConfig(
        templates_dir=args.templates,
        with_reference=not args.no_reference,
        overlay_ids=not args.no_ids,
        fill=not args.no_fill,
        boxes=args.boxes,
        highres=not args.no_highres,
        **extra,
    )
    if args.k is not None:
        cfg = replace(cfg, self_consistency_k=args.k)
    return cfg


def build_parser():
    ap = argparse.ArgumentParser(prog="owg", description="Open-world grasping with set-of-mark prompting.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground a query in a scene file")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True)
    _add_backend(p)
    _add_config(p)
    p.add_argument("--dump", default=None, help="write the marked image here")

    p = sub.add_parser("trial", help="run one closed-loop trial in the simulator")
    p.add_argument("--scenario", choices=("isolated", "cluttered"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--objects", type=int, default=None)
    _add_backend(p, "oracle", " | oracle (simulator ground truth)")
    p.add_argument("--sabotage", action="append", default=[], choices=("ground", "plan", "rank"),
                   help="oracle only: answer this stage wrongly")
    p.add_argument("--no-planning", action="store_true")
    p.add_argument("--no-ranking", action="store_true")
    p.add_argument("--budget", type=int, default=3)
    p.add_argument("--out", default=None, help="write the trial log here instead of stdout")
    p.add_argument("--dump-dir", default=None, help="write per-step marked images here")
    _add_config(p)

    p = sub.add_parser("bench", help="seeded trial benchmark with ablations")
    p.add_argument("--scenario", choices=("isolated", "cluttered"), required=True)
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--seeds", default=None, help="file with one integer seed per line")
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--ablations", default="full,no-planning,no-ranking",
                   help="comma list of full, no-planning, no-ranking, no-planning+no-ranking")
    _add_backend(p, "oracle", " | oracle")
    p.add_argument("--sabotage", action="append", default=[], choices=("ground", "plan", "rank"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="report.json; .csv and .png are written next to it")
    _add_config(p)

    p = sub.add_parser("eval-ground", help="grounding mIoU over an annotated dataset")
    p.add_argument("--dataset", required=True)
    _add_backend(p, None, " | oracle | fixed:ID")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", default=None, help="report.json; .csv and .png are written next to it")
    _add_config(p)

    p = sub.add_parser("record", help="run a command, appending every backend exchange to a transcript")
    p.add_argument("--transcript", required=True)
    p.add_argument("rest", nargs=argparse.REMAINDER, help="-- COMMAND [ARGS...]")

    p = sub.add_parser("embed-rank", help="rank segments by embedding similarity")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--vectors", required=True, help="precomputed vectors file")
    p.add_argument("--stack", default="rectangle,blur_reverse,crop",
                   help="comma list of rectangle, ellipse, contour, blur_reverse, gray_reverse, "
                        "white_background, crop")
    p.add_argument("--multi-template", action="store_true")
    return ap


def _wrap(backend, record_to):
    if record_to:
        return RecordingBackend(backend, TranscriptStore.load(record_to, missing_ok=True))
    return backend


def _sim_backend_factory(args, record_to):
    from .oracle import SimOracleBackend

    if args.backend == "oracle":
        return lambda env: _wrap(SimOracleBackend(env, args.sabotage), record_to)
    if args.sabotage:
        raise UsageError("--sabotage only applies to the oracle backend")
    shared = _make_backend(args, record_to)
    return lambda env: shared


def _make_backend(args, record_to):
    try:
        return parse_backend(args.backend, args.endpoint, record_to)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _write_csv(path, rows):
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(rows)


def _stem(out):
    return os.path.splitext(out)[0]


def cmd_ground(args, record_to):
    from .imaging import encode_png, load_scene
    from .markers import overlay_som
    from .parsing import parse_ground
    from .prompts import build_ground_prompt, load_templates
    from .vlm import request_for, self_consistent

    cfg = _config(args)
    obs, mask = load_scene(args.scene)
    marked = overlay_som(obs, mask, cfg.marker_style(obs.shape))
    bundle = build_ground_prompt(obs.rgb, marked, args.query, load_templates(cfg.templates_dir),
                                 cfg.with_reference)
    ids = set(mask.ids)
    vote = self_consistent(_make_backend(args, record_to), request_for(bundle, cfg.self_consistency_k),
                           lambda t: parse_ground(t, ids), key=lambda g: g.target_id)
    if args.dump:
        with open(args.dump, "wb") as f:
            f.write(encode_png(marked.raster))
    out = {
        "target_id": vote.value.target_id,
        "mentioned_ids": vote.value.mentioned_ids,
        "votes": [None if p is None else p.target_id for p in vote.parses],
    }
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_trial(args, record_to):
    from .sim import SimEnv

    cfg = _config(args, planning=not args.no_planning, ranking=not args.no_ranking,
                  attempt_budget=args.budget, dump_dir=args.dump_dir)
    factory = _sim_backend_factory(args, record_to)
    env = SimEnv.generate(args.scenario, args.seed, args.objects)
    trial = run_trial(env, env.query, cfg, factory(env))
    text = trial.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"{trial.result['status']}: {len(trial.steps)} steps, attempts_used={trial.attempts_used}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


ABLATIONS = {
    "full": {},
    "no-planning": {"planning": False},
    "no-ranking": {"ranking": False},
    "no-planning+no-ranking": {"planning": False, "ranking": False},
}


def _read_seeds(path):
    seeds = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                seeds.append(int(line))
    return tuple(seeds)


def cmd_bench(args, record_to):
    from .harness import BenchConfig, run_benchmark
    from .plotting import plot_breakdown

    names = [a.strip() for a in args.ablations.split(",") if a.strip()]
    unknown = [a for a in names if a not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown ablation {unknown[0]!r}")
    seeds = _read_seeds(args.seeds) if args.seeds else None
    factory = _sim_backend_factory(args, record_to)
    report = {"scenario": args.scenario, "trials": args.trials, "configs": {}}
    breakdowns = {}
    rows = [("config", "success_rate", "successes", "grounding_failures", "grasping_failures")]
    for name in names:
        cfg = BenchConfig(args.scenario, args.trials, seeds, _config(args, **ABLATIONS[name]), args.objects)
        res = run_benchmark(cfg, factory, workers=args.workers)
        report["configs"][name] = res.to_dict()
        breakdowns[name] = res.breakdown
        b = res.breakdown
        rows.append((name, f"{res.success_rate:.6f}", b.successes, b.grounding_failures, b.grasping_failures))
        print(f"{name:<24} success_rate={res.success_rate:.3f}  {b.to_dict()}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        _write_csv(_stem(args.out) + ".csv", rows)
        plot_breakdown(breakdowns, _stem(args.out) + ".png", f"{args.scenario}: {args.trials} trials")
    return EXIT_OK


def cmd_eval_ground(args, record_to):
    from .harness import eval_grounding
    from .plotting import plot_miou

    if args.backend == "oracle":
        def backend(s):
            return _wrap(ScriptedBackend({"ground": f"The object is [{s.target_id}].\nANSWER: [{s.target_id}]"}),
                         record_to)
    elif args.backend.startswith("fixed:"):
        try:
            fixed = int(args.backend.split(":", 1)[1])
        except ValueError:
            raise UsageError("fixed backend needs an integer ID, e.g. fixed:1") from None
        backend = _wrap(ScriptedBackend({"ground": f"The object is [{fixed}].\nANSWER: [{fixed}]"}), record_to)
    else:
        backend = _make_backend(args, record_to)
    report = eval_grounding(args.dataset, backend, _config(args), workers=args.workers)
    for t, v in report.per_type.items():
        print(f"{t:<18} n={report.counts[t]:<4} mIoU={float(v):.4f}")
    print(f"{'overall':<18} n={len(report.per_sample):<4} mIoU={float(report.overall):.4f}  "
          f"(macro {float(report.macro):.4f})")
    if args.out:
        with open(args.out, "w") as f:
            f.write(report.to_json())
        _write_csv(_stem(args.out) + ".csv", report.csv_rows())
        plot_miou(report, _stem(args.out) + ".png")
    return EXIT_OK


def cmd_embed_rank(args, record_to):
    from .harness import FileProvider, TransformStack, rank_by_embedding, segment_scores
    from .imaging import load_scene

    try:
        stack = TransformStack(tuple(k.strip() for k in args.stack.split(",") if k.strip()), args.multi_template)
    except ValueError as e:
        raise UsageError(str(e)) from None
    obs, mask = load_scene(args.scene)
    provider = FileProvider(args.vectors)
    scores = segment_scores(obs, mask, args.query, stack, provider)
    best = rank_by_embedding(obs, mask, args.query, stack, provider)
    print(json.dumps({"target_id": best, "scores": {str(k): round(v, 6) for k, v in scores.items()}},
                     sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "ground": cmd_ground,
    "trial": cmd_trial,
    "bench": cmd_bench,
    "eval-ground": cmd_eval_ground,
    "embed-rank": cmd_embed_rank,
}


def run(argv, record_to=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "record":
        rest = list(args.rest)
        if rest and rest[0] == "--":
            rest = rest[1:]
        if not rest or rest[0] in ("record",):
            raise UsageError("record needs a command to wrap, e.g. owg record --transcript T -- trial ...")
        return run(rest, record_to=args.transcript)
    return COMMANDS[args.command](args, record_to)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except UsageError as e:
        print(f"owg: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as e:
        print(f"owg: backend error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except DataError as e:
        print(f"owg: data error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
