"""Command-line entry point.

Exit codes: 0 success, 2 validation failure (bad trace, spec, config or
evaluation input), 3 unrecoverable backend failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import codec
from .agents.backends import BackendKind
from .config import PipelineConfig, load_config
from .errors import CredentialMissing, DriveFusionError, SchemaViolation, TransportFailure
from .evaluation import EvalDocument, documents_from_run, evaluate, report_to_jsonable
from .pipeline import PipelineReport, analyze, environment_stage, filtration_stage, trace_digest, vehicle_stage, write_report
from .synth import GroundTruth, generate_trace, load_spec, write_outputs
from .trace import parse_trace

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_USAGE = 64

log = logging.getLogger("drivefusion")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="pipeline configuration JSON file")
    parser.add_argument("--seed", type=int, default=default, help="override the scenario seed")
    parser.add_argument(
        "--backend", choices=[b.value for b in BackendKind], default=default, help="agent backend"
    )
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)

    parser = _Parser(prog="drivefusion", description="Multi-sensor driving trace analysis.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic trace and its ground truth")
    p.add_argument("spec", help="scenario spec JSON")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--stem", default=None, help="file stem (default: spec file stem)")

    p = sub.add_parser("filter", parents=[common], help="print the critical events of a trace")
    p.add_argument("trace")

    p = sub.add_parser("reason", parents=[common], help="run one reasoning stage")
    p.add_argument("stage", choices=["vehicle", "env"])
    p.add_argument("trace")

    p = sub.add_parser("pipeline", parents=[common], help="run every stage and write a report")
    p.add_argument("trace")
    p.add_argument("-o", "--output", default=None, help="report directory (default: config output_dir)")

    p = sub.add_parser("eval", parents=[common], help="compute detection metrics and reasoning accuracy")
    p.add_argument("predictions", help="evaluation document or pipeline report JSON")
    p.add_argument("gold", help="evaluation document or ground-truth JSON")
    p.add_argument("-o", "--output", default=None, help="write the metrics report here instead of stdout")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.backend:
        cfg = cfg.replace(backend=BackendKind(args.backend))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _load_trace(path: str):
    data = Path(path).read_bytes()
    return parse_trace(data), trace_digest(data)


def cmd_synth(args, cfg: PipelineConfig) -> int:
    spec = load_spec(args.spec)
    if cfg.seed is not None:
        spec = dataclasses.replace(spec, seed=cfg.seed)
    trace, truth = generate_trace(spec)
    stem = args.stem or Path(args.spec).stem
    trace_path, truth_path = write_outputs(trace, truth, args.output, stem)
    print(trace_path)
    print(truth_path)
    return EXIT_OK


def cmd_filter(args, cfg: PipelineConfig) -> int:
    trace, _ = _load_trace(args.trace)
    result = filtration_stage(trace, cfg, cfg.runner())
    for e in result.events:
        print(f"t={e.t:.4f} factor={e.factor.value} exceedance={e.exceedance:.4f}")
    return EXIT_OK


def cmd_reason(args, cfg: PipelineConfig) -> int:
    trace, _ = _load_trace(args.trace)
    runner = cfg.runner()
    filt = filtration_stage(trace, cfg, runner)
    if args.stage == "vehicle":
        res = vehicle_stage(trace, cfg, runner, filt.frame_indices)
        out = [{"event": codec.to_jsonable(e), "diagnosis": codec.to_jsonable(d)} for e, d in zip(filt.events, res.diagnoses)]
    else:
        res = environment_stage(trace, cfg, runner, filt.frame_indices)
        out = [
            {"event": codec.to_jsonable(e), "changes": codec.to_jsonable(r), "assessments": codec.to_jsonable(a)}
            for e, r, a in zip(filt.events, res.reports, res.assessments)
        ]
    print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    trace, digest = _load_trace(args.trace)
    report = analyze(trace, cfg, cfg.runner(), trace_hash=digest)
    path = write_report(report, args.output or cfg.output_dir)
    meta = report.metadata
    print(path)
    log.info("%d critical event(s); backend counts %s; %d fallback(s)", len(report.events), meta.backend_counts, meta.fallback_count)
    return EXIT_OK


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None


def cmd_eval(args, cfg: PipelineConfig) -> int:
    pred_raw, gold_raw = _read_json(args.predictions), _read_json(args.gold)
    if isinstance(pred_raw, dict) and "metadata" in pred_raw:
        report = codec.from_jsonable(PipelineReport, pred_raw, "predictions")
        truth = codec.from_jsonable(GroundTruth, gold_raw, "gold")
        predicted, gold = documents_from_run(report, truth)
    else:
        predicted = codec.from_jsonable(EvalDocument, pred_raw, "predictions")
        gold = codec.from_jsonable(EvalDocument, gold_raw, "gold")
    result = evaluate(predicted, gold, cfg.evaluation.match_radius)
    doc = {"metrics": report_to_jsonable(result), "config": cfg.to_jsonable(), "config_hash": cfg.config_hash()}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(args.output)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "filter": cmd_filter,
    "reason": cmd_reason,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (TransportFailure, CredentialMissing, SchemaViolation) as exc:
        print(f"drivefusion: backend failure in stage {exc.stage or 'agent'}: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DriveFusionError as exc:
        print(f"drivefusion: {type(exc).__name__} in stage {exc.stage or 'unknown'}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError, InputError) as exc:
        print(f"drivefusion: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
