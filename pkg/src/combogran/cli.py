"""Command-line entry point: ``combogran <subcommand> ...``.

Exit codes: 0 success, 1 validation or constraint failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ablation, calibration, granularity, harness, infotheory, ingest, metrics, modal, synth

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(obj, out: str | None) -> None:
    _emit(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", out)


# -- subcommands ------------------------------------------------------------------

def cmd_ingest(args) -> int:
    if args.synthetic:
        videos = synth.reference_videos(seed=args.seed, with_features=args.features)
        if not args.out:
            raise modal.UsageError("--synthetic needs --out")
        modal.save_manifest(videos, args.out)
        print(f"wrote {len(videos)} scenes, {sum(v.n_keys for v in videos)} key frames", file=sys.stderr)
        return EXIT_OK
    if not args.timelines or not args.frames:
        raise modal.UsageError("give --timelines and --frames, or --synthetic")
    frames: dict[str, list[modal.FrameRef]] = {}
    with open(args.frames, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                f = modal.FrameRef(str(r["scene"]), int(r["index"]), float(r["timestamp"]), str(r["content"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{args.frames}:{lineno}: {exc}") from exc
            frames.setdefault(f.scene_id, []).append(f)
    groups = ingest.parse_timelines(args.timelines)
    pairs, unmatched = [], 0
    for scene, events in groups.items():
        fs = sorted(frames.get(scene, []), key=lambda f: f.timestamp)
        res = ingest.extract_keyframes(fs, events)
        pairs.extend(res.matched)
        unmatched += len(res.unmatched)
    n = ingest.emit_samples(pairs, args.out) if args.out else None
    if n is None:
        for fr, ev in pairs:
            print(json.dumps({"image": fr.content, "instruction": ev.description}, ensure_ascii=False))
    print(f"{len(groups)} scene groups, {len(pairs)} samples, {unmatched} unmatched events", file=sys.stderr)
    return EXIT_OK


def _load_corpus(path) -> modal.Corpus:
    return modal.decompose(modal.load_manifest(path))


def cmd_build(args) -> int:
    corpus = _load_corpus(args.corpus)
    if not args.no_validate:
        report = modal.validate_corpus(corpus)
        if not report.passed:
            for v in report.violations:
                print(f"{v.constraint} {','.join(v.scene_ids)}: {v.message}", file=sys.stderr)
            return EXIT_INVALID
    if args.window is not None:
        ds = granularity.sliding_windows(corpus, args.window)
    elif args.expr:
        ds = granularity.build_dataset(args.expr, corpus)
    else:
        raise modal.UsageError("give --expr or --window")
    lines = "".join(granularity.dumps_sample(s, args.minimal) + "\n" for s in ds.samples)
    _emit(lines, args.out)
    print(f"{ds.name}: {len(ds)} samples " + json.dumps(ds.provenance), file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    videos = modal.load_manifest(args.corpus)
    corpus = modal.decompose(videos)
    report = modal.validate_corpus(corpus, args.corr_threshold)
    for err in modal.corpus_shape_errors(videos, args.scenes, args.statics):
        report.add("shape", [], err)
    _dump(report.to_dict(), args.out)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_mi(args) -> int:
    if args.synthetic:
        rng = np.random.default_rng(args.seed)
        s, m, v = synth.generative_features(rng, args.scenes, args.dim)
        omega = args.omega_avg or 0.0
        weights = None
    else:
        if not args.corpus:
            raise modal.UsageError("give --corpus or --synthetic")
        corpus = _load_corpus(args.corpus)
        s, m, v = infotheory.corpus_features(corpus)
        pairs = modal.overlapping_pairs(corpus.videos)
        plan = modal.overlap_weight_plan(pairs, {x.scene_id: x.n_keys for x in corpus.videos})
        if plan.violations:
            raise ValueError(f"{len(plan.violations)} scene pairs overlap above {modal.HARD_OVERLAP}")
        omega = args.omega_avg if args.omega_avg is not None else infotheory.omega_average(pairs)
        weights = plan.weights
    result = infotheory.check_ordering(s, m, v, omega, weights)
    _dump(result.to_dict(), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    pairs = metrics.read_predictions(args.predictions)
    report = metrics.evaluate(pairs, smooth=not args.no_smooth)
    if args.format == "csv":
        if args.out:
            metrics.write_report_csv(report, args.out, args.dataset)
        else:
            row = report.to_row()
            print("dataset," + ",".join(row))
            print(args.dataset + "," + ",".join(str(x) for x in row.values()))
    else:
        _dump({"dataset": args.dataset, "n": report.n, **report.to_row()}, args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    rows = ablation.read_metric_table(args.metrics)
    cols = args.columns.split(",") if args.columns else None
    grid = ablation.build_grid(rows, args.baseline, cols)
    flags = []
    if args.expected:
        flags = ablation.compare_pd(grid, ablation.read_pd_table(args.expected), args.tol)
    if args.format == "csv":
        if not args.out:
            raise modal.UsageError("--format csv needs --out")
        ablation.write_grid_csv(grid, args.out)
    elif args.format == "json":
        if args.out:
            ablation.write_grid_json(grid, args.out, flags)
        else:
            _dump({"rows": [r.to_dict() for r in grid], "flagged": [vars(f) for f in flags]}, None)
    else:
        _emit(ablation.render_table(grid, cols, flags), args.out)
    for f in flags:
        print(f"flagged exp {f.exp_no} {f.metric}: printed {f.printed:.2f}, "
              f"computed {f.computed:.2f} ({f.kind})", file=sys.stderr)
    return EXIT_INVALID if any(f.kind == "value" for f in flags) else EXIT_OK


def cmd_earlystop(args) -> int:
    entries = ingest.parse_trainer_log(args.log)
    res = ingest.select_early_stop(entries, args.patience, args.delta)
    if args.curve:
        ingest.write_loss_curve(entries, args.curve)
    _dump(res.to_dict(), args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    geom = calibration.ScreenGeometry(args.width, args.height)
    samples = calibration.read_samples(args.samples)
    if not samples:
        raise ValueError(f"{args.samples}: no calibration rows")
    models = [calibration.fit_polynomial(pts, args.degree, axis, geom.extent(axis))
              for axis, pts in sorted(samples.items())]
    if args.out:
        calibration.save_models(models, args.out)
    else:
        _dump({m.axis: m.to_dict() for m in models}, None)
    return EXIT_OK


def cmd_simulate_clicks(args) -> int:
    res = calibration.curved_benchmark(args.width, args.curvature, seed=args.seed,
                                       noise_px=args.noise)
    doc = {"linear": res["linear"].to_dict(), "calibrated": res["calibrated"].to_dict(),
           "coeffs": list(res["model"].coeffs),
           "max_err_reduction": res["linear"].max_err - res["calibrated"].max_err}
    _dump(doc, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    script = harness.load_platform(args.platform)
    if args.model == "oracle":
        model = harness.ScriptedOracle(script)
    elif args.model == "noisy":
        model = harness.NoisyOracle(script, np.random.default_rng(args.seed), args.p_error,
                                    foreign=sorted(harness.foreign_labels(script)))
    else:
        if not args.replay:
            raise modal.UsageError("--model replay needs --replay FILE")
        model = harness.ReplayModel(Path(args.replay).read_text(encoding="utf-8").splitlines())
    cfg = harness.HarnessConfig(args.max_steps, args.epsilon, args.patience, args.refresh_ticks)
    log = harness.run_episode(harness.ScriptedEnv(script), model, cfg)
    _emit(log.to_jsonl(), args.out)
    print(f"{log.platform}: {log.outcome} after {len(log.events)} steps", file=sys.stderr)
    return EXIT_OK if log.outcome == "Success" else EXIT_INVALID


# -- parser -----------------------------------------------------------------------

def _sub(subs, name, func, help_, example):
    p = subs.add_parser(name, help=help_, description=help_, epilog=example,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.set_defaults(func=func)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="combogran",
        description="Combination-granularity dataset algebra, ablation arithmetic and agent loop harness.",
        epilog="Exit codes: 0 success, 1 validation/constraint failure, 2 usage error.",
    )
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = _sub(subs, "ingest", cmd_ingest, "pair annotated action timelines with key frames",
             "timeline CSV line:   3.2,Click [Fire]\n"
             'timeline JSONL line: {"timestamp": 3.2, "description": "Click [Fire]"}\n'
             'frames JSONL line:   {"scene": "rec01", "index": 32, "timestamp": 3.1, "content": "rec01/f032.png"}\n'
             'output line:         {"image": "rec01/f032.png", "instruction": "Click [Fire]"}\n'
             "example:             combogran ingest --synthetic --out scenes.jsonl")
    p.add_argument("--timelines", nargs="*", help="timeline files, one per recording (stem = scene id)")
    p.add_argument("--frames", help="frame manifest JSONL")
    p.add_argument("--synthetic", action="store_true", help="write a 180-scene / 1002-key-frame corpus manifest")
    p.add_argument("--features", action="store_true", help="attach synthetic feature vectors (with --synthetic)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = _sub(subs, "build", cmd_build, "materialize a dataset from a combination expression",
             'corpus line: {"scene_id": "s1", "frames": [{"index": 0, "timestamp": 0.0, "content": "s1/0.png"}, ...],'
             ' "key_indices": [1, 3, 4], "features": ["map:12"], "labels": ["Click [Fire]", ...]}\n'
             'output line: {"id": "M*V:s1", "expr": "M*V", "scene": "s1", "parts": [{"kind": "multi", "refs": [...]}], "target": "..."}\n'
             'example:     combogran build --expr "M*V+S" --corpus scenes.jsonl --out d.jsonl\n'
             "Common spellings: S, M, V, S*M, S*V, M*V, S*M*V, S*V+M, M*V+S, S*V+M*V.")
    p.add_argument("--expr", help='expression such as "M*V+S" (* fuses, + mixes)')
    p.add_argument("--window", type=int, help="sliding-window width instead of an expression")
    p.add_argument("--corpus", required=True)
    p.add_argument("--minimal", action="store_true", help="emit {image, instruction} (single-image samples only)")
    p.add_argument("--no-validate", action="store_true")
    p.add_argument("--out")

    p = _sub(subs, "validate", cmd_validate, "check scene independence, label and derivation constraints",
             "example: combogran validate --corpus scenes.jsonl --scenes 180 --statics 1002 --out report.json")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scenes", type=int)
    p.add_argument("--statics", type=int)
    p.add_argument("--corr-threshold", type=float, default=0.8)
    p.add_argument("--out")

    p = _sub(subs, "mi", cmd_mi, "overlap-corrected Gaussian MI ordering I(S;V) vs I(S;M)",
             "example: combogran mi --synthetic --seed 3 --scenes 200 --dim 8\n"
             "         combogran mi --corpus scenes_with_features.jsonl\n"
             'output:  {"i_sv": {...}, "i_sm": {...}, "ordered": true}')
    p.add_argument("--corpus")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--omega-avg", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = _sub(subs, "eval", cmd_eval, "BLEU-4 and ROUGE-1/2/L over a prediction file",
             'prediction line: {"id": "1", "prediction": "Click [Fire]", "reference": "Click [Fire]"}\n'
             "example:         combogran eval --predictions preds.jsonl --format csv --out report.csv")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", default="")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--no-smooth", action="store_true", help="disable add-one smoothing of zero BLEU orders")
    p.add_argument("--out")

    p = _sub(subs, "ablate", cmd_ablate, "PD ablation grid against a baseline configuration",
             "metric CSV line: val_sum,5,annotations_new2.1,S,34.82,51.50,37.64,48.39\n"
             "  (columns test_set,exp_no,dataset,symbol,<metric>...; exp_no optional)\n"
             'example:         combogran ablate --metrics tableB1.csv --baseline "S*V*M"')
    p.add_argument("--metrics", required=True)
    p.add_argument("--baseline", required=True, help="symbol of the baseline row (order-insensitive)")
    p.add_argument("--columns", help="comma-separated metric columns (default: all)")
    p.add_argument("--expected", help="printed PD table (exp_no,<metric>...) to compare against")
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out")

    p = _sub(subs, "earlystop", cmd_earlystop, "pick the checkpoint from a trainer log",
             'log line: {"current_steps": 120, "epoch": 3.0, "loss": 0.41, "eval_loss": 0.52}\n'
             "example:  combogran earlystop --log trainer_log.jsonl --patience 3 --curve loss.csv")
    p.add_argument("--log", required=True)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--delta", type=float, help="minimum rise above the best loss (default 1%% of it)")
    p.add_argument("--curve", help="write step,epoch,train_loss,eval_loss CSV here")
    p.add_argument("--out")

    p = _sub(subs, "calibrate", cmd_calibrate, "fit per-axis polynomial click calibration",
             "sample CSV line: x,500,1180.4   (columns axis,relative,measured_px)\n"
             "example:         combogran calibrate --samples clicks.csv --width 2360 --height 1600 --out model.json")
    p.add_argument("--samples", required=True)
    p.add_argument("--width", type=int, default=2360)
    p.add_argument("--height", type=int, default=1600)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--out")

    p = _sub(subs, "simulate-clicks", cmd_simulate_clicks, "linear vs calibrated mapping on a bowed screen",
             "example: combogran simulate-clicks --width 2360 --curvature 2e-5 --seed 0")
    p.add_argument("--width", type=int, default=2360)
    p.add_argument("--curvature", type=float, default=2e-5)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = _sub(subs, "simulate", cmd_simulate, "run one closed-loop episode on a scripted platform",
             f"platforms: {', '.join(harness.bundled_platforms())} (or a path to a script JSON)\n"
             'log line:  {"step": 1, "screenshot": "...", "frame": "s0", "model_output": "Click [Fire]", "action": "click(start_box=\'(257,671)\')", ...}\n'
             "example:   combogran simulate --platform platform_b --model oracle --out episode.jsonl\n"
             "exit 0 only when the episode ends in Success.")
    p.add_argument("--platform", required=True)
    p.add_argument("--model", choices=("oracle", "noisy", "replay"), default="oracle")
    p.add_argument("--replay", help="instruction lines for --model replay")
    p.add_argument("--p-error", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--max-steps", type=int, default=20)
    p.add_argument("--refresh-ticks", type=int)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (modal.UsageError, granularity.ExprSyntaxError, harness.ScriptError, FileNotFoundError) as exc:
        print(f"combogran {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ArithmeticError) as exc:
        print(f"combogran {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
