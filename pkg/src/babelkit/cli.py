"""babelkit command-line front end.

Subcommands stream JSONL in and out and emit machine-readable JSON; a
run manifest with fully resolved parameters is written next to every
run's outputs. Exit codes are a stable contract: 0 success, 1 I/O
error, 2 validation error, 3 verification failure.
"""
import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .errors import MalformedLineError, ValidationError
from . import corpus_filter as cf
from . import dedup_graph as dg
from . import layer_surgery as ls
from . import mixture_planner as mp
from .checkpoint_store import load_checkpoint, save_checkpoint
from .reference_model import compare_outputs
from ._util import dump_json, json_line, seeded_rng

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_VERIFY_FAILED = 3


def _write_manifest(args, inputs, outputs, start, manifest_path):
    params = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func", "manifest") and not k.startswith("_")
    }
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in params.items()}
    manifest = {
        "subcommand": args.subcommand,
        "parameters": params,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "duration_seconds": round(time.monotonic() - start, 6),
    }
    dump_json(manifest, manifest_path)


def _manifest_path(args, primary_output):
    if args.manifest:
        return Path(args.manifest)
    if primary_output is None:
        return Path(f"babelkit-{args.subcommand}.manifest.json")
    primary_output = Path(primary_output)
    if primary_output.is_dir():
        return primary_output / "run_manifest.json"
    return Path(str(primary_output) + ".manifest.json")


def _parse_budget(text):
    """Token budget with optional K/M/B suffix: '250K', '1.5M', '2B'."""
    text = text.strip()
    scale = 1
    suffix = text[-1:].upper()
    if suffix in ("K", "M", "B"):
        scale = {"K": 10**3, "M": 10**6, "B": 10**9}[suffix]
        text = text[:-1]
    try:
        value = float(text) * scale
    except ValueError:
        raise ValidationError(f"bad budget {text!r}: expected a number with optional K/M/B suffix")
    if value != int(value) or value <= 0:
        raise ValidationError(f"budget must be a positive whole token count, got {value}")
    return int(value)


def _parse_positions(text):
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValidationError(f"bad positions {text!r}: expected comma-separated integers")


def _load_prompts(args, vocab_size):
    if args.prompts:
        with open(args.prompts, "r", encoding="utf-8") as fh:
            prompts = json.load(fh)
        if not isinstance(prompts, list) or not all(isinstance(p, list) for p in prompts):
            raise ValidationError("prompts file must be a JSON list of token-id lists")
        return prompts
    rng = seeded_rng(args.prompt_seed, "prompts")
    return [
        [int(t) for t in rng.integers(0, vocab_size, size=args.prompt_len)]
        for _ in range(args.gen_prompts)
    ]


# ---------------------------------------------------------------- extend


def cmd_extend(args):
    start = time.monotonic()
    ckpt = load_checkpoint(args.checkpoint)

    given = [bool(args.plan), bool(args.positions), args.auto_k is not None,
             args.append_count is not None]
    if sum(given) != 1:
        raise ValidationError(
            "exactly one of --plan, --positions, --auto-k, --append-count is required"
        )
    init = {"duplicate": ls.INIT_DUPLICATE, "noise": ls.INIT_DUPLICATE_NOISE,
            "zeros": ls.INIT_ZEROS}[args.init]
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan = ls.ExtensionPlan.from_dict(json.load(fh))
    elif args.positions:
        plan = ls.ExtensionPlan(
            strategy=ls.AMONG_LAYERS, positions=_parse_positions(args.positions),
            init=init, noise_mean=args.noise_mean, seed=args.seed,
        ).validate(ckpt.config)
    elif args.auto_k is not None:
        plan = ls.plan_extension(
            ckpt.config, args.auto_k, init=init, noise_mean=args.noise_mean, seed=args.seed
        )
    else:
        plan = ls.ExtensionPlan(
            strategy=ls.AFTER_MODEL, count=args.append_count,
            init=init, noise_mean=args.noise_mean, seed=args.seed,
        ).validate(ckpt.config)

    extended, record = ls.apply_extension(ckpt, plan)
    out_dir = Path(args.output)
    save_checkpoint(extended, out_dir)
    record_path = out_dir / "surgery_record.json"
    payload = {"plan": plan.to_dict(), "record": record.to_dict()}
    dump_json(payload, record_path)
    print(json_line(payload))
    _write_manifest(args, [args.checkpoint], [out_dir, record_path], start,
                    _manifest_path(args, out_dir))
    return EXIT_OK


# ---------------------------------------------------------------- verify


def cmd_verify(args):
    start = time.monotonic()
    base = load_checkpoint(args.base)
    prompts = _load_prompts(args, base.config.vocab_size)

    if args.mode == "grid":
        report = ls.ablation_grid(
            base, args.k, means=args.means, seeds=list(range(args.grid_seeds)),
            prompts=prompts,
        )
        out = Path(args.output) if args.output else None
        if out:
            dump_json(report, out)
        if args.pretty:
            for cell in report["cells"]:
                mean = "-" if cell["noise_mean"] is None else cell["noise_mean"]
                print(f"{cell['strategy']:<14} {cell['init']:<16} mean={mean:<8} "
                      f"mean_abs={cell['mean_abs_deviation']:.6g} "
                      f"max_abs={cell['max_abs_deviation']:.6g}")
        else:
            print(json_line(report))
        _write_manifest(args, [args.base], [out] if out else [], start,
                        _manifest_path(args, out))
        return EXIT_OK

    if not args.extended:
        raise ValidationError(f"--extended is required for mode {args.mode!r}")
    extended = load_checkpoint(args.extended)
    stats = compare_outputs(base, extended, prompts)
    summary = {"mode": args.mode, "mean_abs": stats["mean_abs"], "max_abs": stats["max_abs"],
               "prompt_count": len(prompts)}
    out = Path(args.output) if args.output else None
    if out:
        dump_json({**summary, "per_prompt": stats["per_prompt"]}, out)
    print(json_line(summary))
    _write_manifest(args, [args.base, args.extended], [out] if out else [], start,
                    _manifest_path(args, out))
    if args.mode == "identity" and stats["max_abs"] != 0.0:
        print(f"identity check failed: max_abs deviation {stats['max_abs']}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    return EXIT_OK


# ---------------------------------------------------------------- clean


def cmd_clean(args):
    start = time.monotonic()
    rules = cf.FilterRules(min_chars=args.min_chars, max_digit_ratio=args.max_digit_ratio)
    rules.validate()
    sidecar = cf.load_score_sidecar(args.scores) if args.scores else None
    gate = args.score_threshold is not None

    out_path = Path(args.output)
    rejects_path = Path(args.rejects) if args.rejects else Path(str(out_path) + ".rejects.jsonl")
    counts = {}
    kept_count = 0
    with open(out_path, "w", encoding="utf-8") as out_fh, \
         open(rejects_path, "w", encoding="utf-8") as rej_fh:
        for lineno, item in cf.iter_documents(args.input, strict=args.strict):
            if isinstance(item, MalformedLineError):
                counts[cf.REASON_MALFORMED] = counts.get(cf.REASON_MALFORMED, 0) + 1
                rej_fh.write(json_line(
                    {"id": None, "reason": cf.REASON_MALFORMED,
                     "detail": f"line {item.lineno}: {item.detail}"}) + "\n")
                continue
            decision = cf.normalize_filter(item, rules)
            if decision.kept and gate:
                decision = cf.gate_decision(item, args.score_threshold, sidecar)
            if decision.kept:
                kept_count += 1
                out_fh.write(json_line(item.to_dict()) + "\n")
            else:
                counts[decision.reason] = counts.get(decision.reason, 0) + 1
                rej_fh.write(json_line(
                    {"id": item.id, "reason": decision.reason, "detail": decision.detail}) + "\n")
    summary = {"kept": kept_count, "rejected": counts,
               "output": str(out_path), "rejects": str(rejects_path)}
    print(json_line(summary))
    _write_manifest(args, [args.input], [out_path, rejects_path], start,
                    _manifest_path(args, out_path))
    return EXIT_OK


# ---------------------------------------------------------------- dedup


def cmd_dedup(args):
    start = time.monotonic()
    params = dg.MinHashParams(
        shingle_k=args.shingle_k, num_perm=args.num_perm, bands=args.bands,
        rows=args.rows, jaccard_threshold=args.threshold, seed=args.seed,
    ).validate()

    docs = []
    skipped = 0
    for lineno, item in cf.iter_documents(args.input, strict=args.strict):
        if isinstance(item, MalformedLineError):
            skipped += 1
            print(f"skipping malformed line {item.lineno}: {item.detail}", file=sys.stderr)
            continue
        docs.append(item)

    kept, report = dg.dedup(docs, params)
    out_path = Path(args.output)
    cf.write_documents(kept, out_path)
    report_path = Path(args.report) if args.report else Path(str(out_path) + ".report.json")
    report_dict = report.to_dict()
    report_dict["skipped_lines"] = skipped
    dump_json(report_dict, report_path)
    if args.pairs_tsv:
        with open(args.pairs_tsv, "w", encoding="utf-8") as fh:
            for a, b, est in report.candidate_pairs:
                fh.write(f"{a}\t{b}\t{est}\n")
    print(json_line({"input": len(docs), "kept": len(report.kept),
                     "removed": len(report.removed), "report": str(report_path)}))
    outputs = [out_path, report_path] + ([Path(args.pairs_tsv)] if args.pairs_tsv else [])
    _write_manifest(args, [args.input], outputs, start, _manifest_path(args, out_path))
    return EXIT_OK


# ---------------------------------------------------------------- mix / stats


def cmd_mix(args):
    start = time.monotonic()
    with open(args.stats, "r", encoding="utf-8") as fh:
        stats = mp.CorpusStats.from_dict(json.load(fh))
    budget = _parse_budget(args.budget)
    if args.stage == 1:
        plan = mp.stage1_allocation(stats, budget)
    else:
        plan = mp.stage2_allocation(
            stats, budget, low_boost=args.low_boost, textbook_boost=args.textbook_boost
        )
    out = Path(args.output) if args.output else None
    if out:
        dump_json(plan.to_dict(), out)
    if args.pretty:
        for (lang, cat), tokens in sorted(plan.allocations.items()):
            if tokens:
                print(f"{lang:<5} {cat:<9} {tokens}")
        print(f"total {plan.total()} of budget {plan.budget}")
    else:
        print(json_line(plan.to_dict()))

    outputs = [out] if out else []
    if args.corpus:
        if not args.manifest_output:
            raise ValidationError("--manifest-output is required with --corpus")
        index = mp.build_corpus_index(cf.read_documents(args.corpus, strict=False))
        manifest = mp.sample_manifest(plan, index, seed=args.seed)
        dump_json(mp.manifest_to_dict(manifest), args.manifest_output)
        outputs.append(Path(args.manifest_output))
    _write_manifest(args, [args.stats], outputs, start, _manifest_path(args, out))
    return EXIT_OK


def cmd_stats(args):
    start = time.monotonic()
    docs = cf.read_documents(args.input, strict=args.strict)
    stats = mp.CorpusStats.from_documents(docs)
    out = Path(args.output) if args.output else None
    if out:
        dump_json(stats.to_dict(), out)
    if args.pretty:
        for (lang, cat), tokens in sorted(stats.tokens.items()):
            print(f"{lang:<5} {cat:<9} {tokens}")
    else:
        print(json_line(stats.to_dict()))
    _write_manifest(args, [args.input], [out] if out else [], start,
                    _manifest_path(args, out))
    return EXIT_OK


def cmd_languages(args):
    start = time.monotonic()
    registry = mp.export_registry()
    out = Path(args.output) if args.output else None
    if out:
        dump_json(registry, out)
    if args.pretty:
        for rec in registry:
            flag = " (cc-rule conflict)" if rec["classification_conflict"] else ""
            print(f"{rec['code']:<4} {rec['name']:<20} speakers={rec['speakers']:>10} "
                  f"cc={rec['cc_ratio']:<7} {rec['resource_class']}{flag}")
    else:
        print(json_line(registry))
    _write_manifest(args, [], [out] if out else [], start, _manifest_path(args, out))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="babelkit",
        description="Layer-extension checkpoint surgery and corpus curation toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"babelkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("extend", help="insert new layers into a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory or tensor file")
    p.add_argument("--output", required=True, help="output checkpoint directory")
    p.add_argument("--plan", help="JSON extension plan file")
    p.add_argument("--positions", help="comma-separated original-layer insertion positions")
    p.add_argument("--auto-k", type=int, help="insert k layers per the second-half stride-2 rule")
    p.add_argument("--append-count", type=int, help="append copies of the final layer instead")
    p.add_argument("--init", choices=("duplicate", "noise", "zeros"), default="noise")
    p.add_argument("--noise-mean", type=float, default=ls.DEFAULT_NOISE_MEAN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("verify", help="compare model outputs before/after surgery")
    p.add_argument("--base", required=True)
    p.add_argument("--extended")
    p.add_argument("--mode", choices=("identity", "deviation", "grid"), default="deviation")
    p.add_argument("--prompts", help="JSON file: list of token-id lists")
    p.add_argument("--gen-prompts", type=int, default=8, help="generate this many prompts")
    p.add_argument("--prompt-len", type=int, default=16)
    p.add_argument("--prompt-seed", type=int, default=0)
    p.add_argument("--k", type=int, default=2, help="grid mode: layers to insert")
    p.add_argument("--means", type=float, nargs="+", default=[0.01, 0.0001])
    p.add_argument("--grid-seeds", type=int, default=3, help="grid mode: seeds per cell")
    p.add_argument("--output", help="write stats/report JSON here")
    p.add_argument("--pretty", action="store_true")
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("clean", help="rule-based filtering and score gating")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--rejects", help="rejection log path (default <output>.rejects.jsonl)")
    p.add_argument("--min-chars", type=int, default=100)
    p.add_argument("--max-digit-ratio", type=float, default=0.3)
    p.add_argument("--score-threshold", type=float, help="enable the quality-score gate")
    p.add_argument("--scores", help="sidecar JSONL of {id, score}")
    p.add_argument("--strict", action="store_true", help="abort on malformed lines")
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("dedup", help="exact + near-duplicate removal")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", help="report JSON path (default <output>.report.json)")
    p.add_argument("--pairs-tsv", help="optional TSV dump of retained pairs")
    p.add_argument("--shingle-k", type=int, default=5)
    p.add_argument("--num-perm", type=int, default=256)
    p.add_argument("--bands", type=int, default=32)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("mix", help="plan token mixtures over the language registry")
    p.add_argument("--stats", required=True, help="CorpusStats JSON")
    p.add_argument("--budget", required=True, help="token budget, e.g. 250K, 1.5M, 2B")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--low-boost", type=float, default=2.0)
    p.add_argument("--textbook-boost", type=float, default=2.0)
    p.add_argument("--output", help="plan JSON path")
    p.add_argument("--corpus", help="corpus JSONL to sample a manifest from")
    p.add_argument("--manifest-output", help="manifest JSON path (with --corpus)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pretty", action="store_true")
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("stats", help="per-(language, category) token counts of a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="stats JSON path")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--pretty", action="store_true")
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("languages", help="export the built-in language registry")
    p.add_argument("--output", help="registry JSON path")
    p.add_argument("--pretty", action="store_true")
    p.add_argument("--manifest", help="run manifest path override")
    p.set_defaults(func=cmd_languages)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MalformedLineError as exc:
        print(f"error: malformed input line {exc.lineno}: {exc.detail}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except UnicodeDecodeError as exc:
        print(f"error: input is not valid UTF-8: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
