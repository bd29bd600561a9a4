"""Command line front end for trace extraction.

One invocation, one model, one prompts file, one trace file per prompt.
Exit codes match the engine CLI: 0 success, 1 usage error, 2 extraction
error.
"""

from __future__ import annotations

import argparse
import sys

from .capture import ExtractionConfig, extract
from .errors import ConfigError, ExtractionError


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on exit code 1, not 2."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="layertap", description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, help="model path or identifier")
    parser.add_argument("--prompts", required=True, help="UTF-8 file, one prompt per line")
    parser.add_argument("--output-dir", required=True, help="directory for trace files")
    parser.add_argument(
        "--layers", default="all",
        help='"all" or a comma list of layer indices; 0 is the embedding output '
             "and the block count is the final layer (always captured)",
    )
    parser.add_argument(
        "--topk", type=int, default=0,
        help="pairs kept per layer; 0 stores dense rows (default)",
    )
    parser.add_argument("--max-new-tokens", type=int, default=16)
    parser.add_argument("--device", default="cpu", help="device hint, e.g. cpu or cuda:0")
    return parser


def _parse_layers(spec: str) -> tuple[int, ...] | None:
    spec = spec.strip()
    if spec == "all":
        return None
    try:
        layers = tuple(int(part) for part in spec.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(f"bad layer list {spec!r}") from None
    if not layers:
        raise ConfigError("layer list cannot be empty")
    return layers


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = ExtractionConfig(
            model_id=args.model,
            prompts_path=args.prompts,
            max_new_tokens=args.max_new_tokens,
            layers=_parse_layers(args.layers),
            topk=args.topk,
            device=args.device,
        )
        config.validate()
        paths = extract(config, args.output_dir)
    except ConfigError as exc:
        print(f"layertap: error: {exc}", file=sys.stderr)
        return 1
    except ExtractionError as exc:
        print(f"layertap: error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
