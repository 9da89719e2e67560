# cli.py
"""
Command-line entry point.

    python cli.py solve --config configs/example_1d.toml --out runs/1d
    python cli.py sweep --config configs/example_2d.toml --strict
    python cli.py train --print-config > my_config.json

Config files are TOML or JSON; flags override file fields.
"""

import argparse
import json
import re
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from exception_handlers import EXIT_DIVERGED, EXIT_OK, run_with_handlers
from exceptions import ConfigParseException
from experiments import RUNNERS, run
from logging_config import get_logger
from pydantic_models import ExperimentConfig

logger = get_logger(__name__)

_TOML_POSITION = re.compile(r"\(at line (\d+), column (\d+)\)")
_SEEDED_SECTIONS = ("dataset", "model", "training")


def read_config_file(path) -> Dict[str, Any]:
    """Parse a TOML or JSON config file into a plain dict."""
    path = Path(path)
    source = str(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParseException(source, f"cannot read config: {e.strerror or e}") from e
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigParseException(source, e.msg, line=e.lineno, column=e.colno) from e
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = _TOML_POSITION.search(str(e))
        line, column = (int(match.group(1)), int(match.group(2))) if match else (None, None)
        message = _TOML_POSITION.sub("", str(e)).strip()
        raise ConfigParseException(source, message, line=line, column=column) from e


def apply_overrides(raw: Dict[str, Any], mode: str, seed: Optional[int] = None,
                    out: Optional[str] = None, strict: bool = False) -> Dict[str, Any]:
    """Command-line flags win over the file; --seed reseeds every nested stage."""
    merged = dict(raw)
    merged["mode"] = mode
    if seed is not None:
        merged["seed"] = seed
        for section in _SEEDED_SECTIONS:
            merged[section] = {**merged.get(section, {}), "seed": seed}
    if out is not None:
        merged["output_dir"] = out
    if strict:
        merged["strict"] = True
    return merged


def _field_path(error: dict) -> str:
    return ".".join(str(part) for part in error["loc"]) or "<root>"


def validate_config(raw: Dict[str, Any], source: str = "<config>") -> ExperimentConfig:
    try:
        config = ExperimentConfig(**raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigParseException(source, first["msg"], field=_field_path(first)) from e
    check_references(config, source)
    return config


def check_references(config: ExperimentConfig, source: str) -> None:
    """Every file a config points at must exist."""
    if config.dataset_path and not Path(config.dataset_path).is_file():
        raise ConfigParseException(source, f"dataset file not found: {config.dataset_path}", field="dataset_path")
    for index, ref in enumerate(config.models):
        if ref.path and not Path(ref.path).is_file():
            raise ConfigParseException(source, f"model file not found: {ref.path}", field=f"models.{index}.path")


def load_config(path: Optional[str], mode: str, seed: Optional[int] = None,
                out: Optional[str] = None, strict: bool = False) -> ExperimentConfig:
    raw = read_config_file(path) if path else {}
    return validate_config(apply_overrides(raw, mode, seed, out, strict), source=path or "<defaults>")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hints",
        description="Hybrid network-preconditioned Helmholtz solver experiments",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "generate a training dataset",
        "train": "train a model (generating its dataset if none is given)",
        "solve": "solve one system with one method",
        "sweep": "cross methods, skip factors and geometries",
        "diagnose": "spectral-bias and network-alone diagnostics",
    }
    for name in RUNNERS:
        command = commands.add_parser(name, help=helps[name])
        command.add_argument("--config", metavar="PATH", help="TOML or JSON experiment file")
        command.add_argument("--seed", type=int, metavar="N", help="override every seed in the config")
        command.add_argument("--out", metavar="DIR", help="output directory")
        command.add_argument("--strict", action="store_true", help="exit nonzero when any run diverged")
        command.add_argument("--print-config", action="store_true",
                             help="print the fully-defaulted config as JSON and exit")
    return parser


def execute(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.command, args.seed, args.out, args.strict)
    if args.print_config:
        print(config.model_dump_json(indent=2))
        return EXIT_OK

    result = run(config)
    for name, path in sorted(result.artifacts.items()):
        logger.info(f"{name}: {path}")
    if config.strict and result.any_diverged:
        logger.error("At least one run diverged", extra={"rows": len(result.rows)})
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run_with_handlers(lambda: execute(args))


if __name__ == "__main__":
    sys.exit(main())
