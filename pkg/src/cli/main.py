"""
uahmp 命令行入口

    uahmp synth     --config config/tiny_run.json --out data/synth
    uahmp train     --config config/tiny_run.json --set train.epochs=2
    uahmp eval      --checkpoint runs/default/best.ckpt
    uahmp predict   --checkpoint runs/default/best.ckpt --observed walk.csv
    uahmp visualize --prediction runs/default/prediction.jsonl
    uahmp ablate    --config config/ablation_run.json

成功时退出码 0，stdout 输出一行 JSON；UAHMPError 时 stderr 输出错误 JSON 并返回 1，其他异常返回 2。
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

import structlog

from ..core.config import RunConfig, config_hash, load_run_config
from ..core.exceptions import UAHMPError, get_user_friendly_message
from ..core.logging import bind_run_context, setup_logging
from . import commands

logger = structlog.get_logger(__name__)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run config file (JSON or YAML)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, repeatable (e.g. train.epochs=5)")
    parser.add_argument("--out", help="output directory (overrides paths.out_dir)")
    parser.add_argument("--seed", type=int, help="override every random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uahmp", description="Uncertainty-aware human motion prediction")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic sinusoid skeleton dataset")
    _common(p)

    p = sub.add_parser("train", help="train the predictor")
    _common(p)
    p.add_argument("--resume", help="resume from a checkpoint (epoch boundary)")

    p = sub.add_parser("eval", help="MPJPE-at-horizon report for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint")

    p = sub.add_parser("predict", help="predict the future of an observed pose file")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--observed", required=True, help="CSV or JSONL pose file")

    p = sub.add_parser("visualize", help="render uncertainty artifacts for a prediction file")
    _common(p)
    p.add_argument("--prediction", required=True)
    p.add_argument("--truth", help="pose file with ground truth covering the predicted frames")
    p.add_argument("--format", dest="formats", action="append", choices=["csv", "pgm", "svg"],
                   help="uncertainty map format, repeatable (default: all)")

    p = sub.add_parser("ablate", help="noisy-sample ablation across seeds and loss modes")
    _common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: List[str] = list(args.overrides)
    if args.out:
        overrides.append(f"paths.out_dir={json.dumps(args.out)}")
    cfg = load_run_config(args.config, overrides)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dispatch(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    handlers: Dict[str, Callable[[], Dict[str, Any]]] = {
        "synth": lambda: commands.cmd_synth(cfg),
        "train": lambda: commands.cmd_train(cfg, resume=args.resume),
        "eval": lambda: commands.cmd_eval(cfg, checkpoint=args.checkpoint),
        "predict": lambda: commands.cmd_predict(cfg, args.observed, checkpoint=args.checkpoint),
        "visualize": lambda: commands.cmd_visualize(
            cfg, args.prediction, truth_path=args.truth, formats=args.formats or ("csv", "pgm", "svg")
        ),
        "ablate": lambda: commands.cmd_ablate(cfg),
    }
    return handlers[args.command]()


def _error_json(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = resolve_config(args)
        bind_run_context(args.command, config_hash(cfg))
        logger.info("cli.command_started", out_dir=cfg.paths.out_dir)
        result = _dispatch(args, cfg)
    except UAHMPError as exc:
        payload = exc.to_dict()
        payload["hint"] = get_user_friendly_message(exc)
        logger.error("cli.command_failed", command=args.command, error=payload)
        _error_json(payload)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("cli.unexpected_error", command=args.command)
        _error_json({
            "error_type": exc.__class__.__name__,
            "error_code": "UnexpectedError",
            "message": str(exc),
            "context": {},
            "hint": "unexpected failure",
        })
        return 2
    commands.emit_result(result)
    logger.info("cli.command_done", command=args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
