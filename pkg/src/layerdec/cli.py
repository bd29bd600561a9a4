"""Command line front end.

Subcommands map one-to-one onto library entry points: decode streams per
step decisions, analyze emits diagnostics reports, eval scores fixture
directories, bench times strategies, trace-gen renders scenario files, and
inspect dumps a trace header.  Exit codes: 0 success, 1 usage error, 2 data
error.  Record schemas are documented in ``docs/cli.md``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .decoding import (
    DecodeConfig,
    EntropySign,
    LayerSetPolicy,
    Strategy,
    decode_stream,
)
from .errors import EngineError, InvalidConfig
from .evalharness import (
    evaluate,
    layer_kl_profile,
    load_fixture_dir,
    throughput_bench,
    token_trajectory,
)
from .synth import load_scenario, generate
from .trace import read_header, iter_steps, read_trace_file, write_trace_file


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config_from_args(args)
    except InvalidConfig as exc:
        print(f"layerdec: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.handler(args, cfg)
    except InvalidConfig as exc:
        print(f"layerdec: error: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"layerdec: error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on exit code 1, not 2."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="layerdec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--trace", help="path to a layer-logit trace file")
        p.add_argument(
            "--method", choices=["greedy", "end", "dola"], default="end",
            help="decoding strategy (default: end)",
        )
        p.add_argument(
            "--lambda", dest="entropy_weight", type=float, default=2.0,
            help="entropy weight for the adjustment (default: 2)",
        )
        p.add_argument(
            "--alpha", type=float, default=0.01,
            help="head filter threshold relative to the max (default: 0.01)",
        )
        p.add_argument(
            "--layers", default="bucket:3/4",
            help='layer set: "16,20,24", "bucket:3/4", or "dynamic"',
        )
        p.add_argument(
            "--entropy-sign", choices=["standard", "literal"], default="standard",
        )
        p.add_argument(
            "--renormalize", type=_parse_bool, default=False, metavar="BOOL",
        )
        p.add_argument("--output", help="write here instead of stdout")
        p.add_argument("--format", choices=["jsonl", "summary"], default="jsonl")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("decode", help="stream per-step decisions for a trace")
    common(p)
    p.set_defaults(handler=_cmd_decode)

    p = sub.add_parser("analyze", help="layer divergence and trajectory reports")
    common(p)
    p.add_argument("--report", choices=["kl", "trajectory"], default="kl")
    p.add_argument("--step", type=int, default=0, help="step for trajectory reports")
    p.add_argument("--tokens", default="", help="comma-separated token ids")
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("eval", help="score a fixture directory")
    common(p)
    p.add_argument("--fixtures", required=True, help="fixture directory with manifest.json")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("bench", help="throughput comparison on one trace")
    common(p)
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("trace-gen", help="render a scenario file to a trace")
    common(p)
    p.add_argument("--scenario", required=True, help="scenario JSON path")
    p.set_defaults(handler=_cmd_trace_gen)

    p = sub.add_parser("inspect", help="dump a trace header")
    common(p)
    p.add_argument("path", nargs="?", help="trace file (or use --trace)")
    p.set_defaults(handler=_cmd_inspect)

    return parser


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_layers(spec: str) -> LayerSetPolicy:
    spec = spec.strip()
    if spec == "dynamic":
        return LayerSetPolicy(kind="dynamic_bucket")
    if spec.startswith("bucket:"):
        body = spec[len("bucket:"):]
        try:
            index, count = body.split("/")
            return LayerSetPolicy(
                kind="bucket", bucket_index=int(index), bucket_count=int(count)
            )
        except ValueError:
            raise InvalidConfig(
                f'bad bucket spec {spec!r}, expected "bucket:INDEX/COUNT"'
            ) from None
    try:
        layers = tuple(int(part) for part in spec.split(",") if part.strip() != "")
    except ValueError:
        raise InvalidConfig(f"bad layer list {spec!r}") from None
    if not layers:
        raise InvalidConfig("layer spec cannot be empty")
    return LayerSetPolicy(kind="explicit", layers=layers)


def _config_from_args(args) -> DecodeConfig:
    if not 0 < args.alpha <= 1:
        raise InvalidConfig("alpha must lie in (0, 1]")
    if args.entropy_weight < 0:
        raise InvalidConfig("lambda must be non-negative")
    return DecodeConfig(
        strategy=Strategy(args.method),
        entropy_weight=args.entropy_weight,
        alpha=args.alpha,
        layer_set=_parse_layers(args.layers),
        entropy_sign=EntropySign(args.entropy_sign),
        renormalize=args.renormalize,
    )


def _require_trace(args) -> str:
    path = getattr(args, "path", None) or args.trace
    if not path:
        raise InvalidConfig("a trace path is required (--trace)")
    return path


class _Output:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        self.stream = open(self.path, "w", encoding="utf-8") if self.path else sys.stdout
        return self.stream

    def __exit__(self, *exc):
        if self.path:
            self.stream.close()
        return False


def _write_rows(rows, stream) -> None:
    for row in rows:
        stream.write(json.dumps(row, sort_keys=True) + "\n")


def _cmd_decode(args, cfg: DecodeConfig) -> int:
    path = _require_trace(args)
    with _Output(args.output) as out:
        tokens = []
        try:
            with open(path, "rb") as fh:
                header = read_header(fh)
                for decision in decode_stream(header, iter_steps(fh, header), cfg):
                    entropy = decision.entropies.get(decision.chosen_token)
                    row = {
                        "step": decision.step_index,
                        "token": decision.chosen_token,
                        "score": float(decision.final_scores[decision.chosen_token]),
                        "entropy": entropy,
                        "vhead_size": len(decision.vhead),
                    }
                    if args.format == "jsonl":
                        _write_rows([row], out)
                    else:
                        tokens.append(row)
        except OSError as exc:
            raise EngineError(f"cannot read {path}: {exc}") from exc
        if args.format == "summary":
            out.write(f"trace: {path}\nstrategy: {cfg.strategy.value}\n")
            out.write("tokens: " + " ".join(str(r["token"]) for r in tokens) + "\n")
            out.write(f"{'step':>6} {'token':>8} {'score':>12} {'vhead':>6}\n")
            for r in tokens:
                out.write(
                    f"{r['step']:>6} {r['token']:>8} {r['score']:>12.6g} {r['vhead_size']:>6}\n"
                )
    return 0


def _cmd_analyze(args, cfg: DecodeConfig) -> int:
    trace = read_trace_file(_require_trace(args))
    with _Output(args.output) as out:
        if args.report == "kl":
            profile = layer_kl_profile(trace)
            if args.format == "jsonl":
                _write_rows(profile.rows(), out)
            else:
                layers = profile.layers
                out.write("mean KL(final || layer) per layer\n")
                means = profile.values.mean(axis=0) if profile.values.size else []
                for l, m in zip(layers, means):
                    out.write(f"  layer {l:>4}: {m:.6f}\n")
        else:
            token_ids = [int(t) for t in args.tokens.split(",") if t.strip() != ""]
            if not token_ids:
                raise InvalidConfig("trajectory report needs --tokens")
            matrix = token_trajectory(trace, args.step, token_ids)
            rows = [
                {
                    "kind": "trajectory",
                    "step": args.step,
                    "token": t,
                    "probs": [float(x) for x in matrix[i]],
                }
                for i, t in enumerate(token_ids)
            ]
            if args.format == "jsonl":
                _write_rows(rows, out)
            else:
                out.write(f"per-layer probabilities at step {args.step}\n")
                for row in rows:
                    peaks = " ".join(f"{p:.4f}" for p in row["probs"])
                    out.write(f"  token {row['token']:>6}: {peaks}\n")
    return 0


def _cmd_eval(args, cfg: DecodeConfig) -> int:
    mc_examples, qa_examples = load_fixture_dir(args.fixtures)
    report = evaluate(mc_examples, qa_examples, cfg)
    with _Output(args.output) as out:
        if args.format == "jsonl":
            _write_rows(report.rows(), out)
        else:
            out.write(report.summary() + "\n")
    return 0


def _cmd_bench(args, cfg: DecodeConfig) -> int:
    trace = read_trace_file(_require_trace(args))
    cfgs = [
        replace(cfg, strategy=Strategy.GREEDY),
        replace(cfg, strategy=Strategy.END),
        replace(cfg, strategy=Strategy.DOLA),
    ]
    report = throughput_bench(trace, cfgs, repetitions=args.repetitions)
    with _Output(args.output) as out:
        if args.format == "jsonl":
            rows = [{"kind": "bench", **e} for e in report["entries"]]
            tail = {k: v for k, v in report.items() if k != "entries"}
            _write_rows(rows + [{"kind": "bench_summary", **tail}], out)
        else:
            out.write(f"{'strategy':>10} {'tokens/s':>12}\n")
            for e in report["entries"]:
                out.write(f"{e['strategy']:>10} {e['tokens_per_s']:>12.2f}\n")
            if "end_overhead_vs_greedy_pct" in report:
                out.write(
                    f"overhead (end vs greedy): {report['end_overhead_vs_greedy_pct']:.1f}%\n"
                )
            out.write(report["reference"] + "\n")
    return 0


def _cmd_trace_gen(args, cfg: DecodeConfig) -> int:
    if not args.output:
        raise InvalidConfig("trace-gen requires --output")
    spec = load_scenario(args.scenario)
    if args.seed:
        spec = replace(spec, seed=args.seed)
    trace = generate(spec)
    written = write_trace_file(trace, args.output)
    print(
        f"wrote {args.output}: {trace.header.step_count} steps, "
        f"{trace.header.num_layers} layers, {written} bytes",
        file=sys.stderr,
    )
    return 0


def _cmd_inspect(args, cfg: DecodeConfig) -> int:
    path = _require_trace(args)
    try:
        with open(path, "rb") as fh:
            header = read_header(fh)
    except OSError as exc:
        raise EngineError(f"cannot read {path}: {exc}") from exc
    fields = {
        "vocab_size": header.vocab_size,
        "num_layers": header.num_layers,
        "layer_indices": list(header.layer_indices),
        "encoding": header.encoding.name.lower(),
        "topk": header.topk,
        "tokenizer_id": header.tokenizer_id,
        "step_count": header.step_count,
        "version": header.version,
    }
    with _Output(args.output) as out:
        if args.format == "jsonl":
            _write_rows([{"kind": "header", **fields}], out)
        else:
            for key, value in fields.items():
                out.write(f"{key}: {value}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
