"""Command-line entry point.

Subcommands: gen-data, train, eval, compare, sweep, gradcheck.  Settings
resolve as defaults < config file (key=value lines) < flags, the resolved
configuration is printed before anything runs, and exit codes are 0 for
success, 1 for contract or format violations, 2 for numerical aborts.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import checks
from .data import build_glyph12, load_corpus, save_corpus
from .errors import ContractError, FormatError, NumericalAbort
from .metrics import compare_report, evaluate
from .trainer import (SWEEP_GRID, TrainConfig, load_checkpoint,
                      save_checkpoint, sweep, train, train_with_corpora)

PROG = "smile"

# flag spelling -> (dest, parser); config files use the same spellings
_OPTIONS = {
    "--mode": ("mode", str),
    "--lambda": ("lam", float),
    "--entropy-variant": ("entropy_variant", str),
    "--p-init": ("p_init", float),
    "--p-add": ("p_add", float),
    "--steps": ("steps", int),
    "--batch-source": ("batch_source", int),
    "--batch-target": ("batch_target", int),
    "--seed": ("seed", int),
    "--optimizer": ("optimizer", str),
    "--lr": ("lr", float),
    "--clip": ("clip", float),
    "--source": ("source", str),
    "--target": ("target", str),
    "--test": ("test", str),
    "--checkpoint": ("checkpoint", str),
    "--out": ("out", str),
    "--eval-every": ("eval_every", int),
    "--preset": ("preset", str),
}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ContractError(f"config: {raw!r} is not a boolean")


# config-file-only keys, never flags
_CONFIG_EXTRA = {"allow-cold-smile": ("allow_cold_smile", _parse_bool)}

_TRAIN_FLAGS = ("--mode", "--lambda", "--entropy-variant", "--p-init",
                "--p-add", "--steps", "--batch-source", "--batch-target",
                "--seed", "--optimizer", "--lr", "--clip", "--source",
                "--target", "--test", "--checkpoint", "--out", "--eval-every")

_COMMAND_FLAGS = {
    "gen-data": ("--preset", "--seed", "--out"),
    "train": _TRAIN_FLAGS,
    "eval": ("--checkpoint", "--test"),
    "compare": ("--test", "--out"),
    "sweep": ("--lambda", "--entropy-variant", "--steps", "--batch-source",
              "--batch-target", "--seed", "--optimizer", "--lr", "--clip",
              "--source", "--target", "--test", "--checkpoint", "--out",
              "--eval-every"),
    "gradcheck": ("--seed",),
}

_DEFAULTS = {
    "gen-data": {"preset": "glyph12", "seed": 7, "out": None},
    "train": {f: None for f in
              ("source", "target", "test", "checkpoint", "out", "lr")}
             | {"mode": "base", "lam": 1.0, "entropy_variant": "shannon",
                "p_init": 0.0, "p_add": 5e-5, "steps": 1000,
                "batch_source": 32, "batch_target": 32, "seed": 0,
                "optimizer": "adam", "clip": 5.0, "eval_every": 200,
                "allow_cold_smile": False},
    "eval": {"checkpoint": None, "test": None},
    "compare": {"test": None, "out": None},
    "gradcheck": {"seed": 0},
}
_DEFAULTS["sweep"] = {k: v for k, v in _DEFAULTS["train"].items()
                      if k not in ("mode", "p_init", "p_add")}

_UNSET = object()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ContractError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog=PROG, description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for command, flags in _COMMAND_FLAGS.items():
        sub = subs.add_parser(command)
        for flag in flags:
            dest, typ = _OPTIONS[flag]
            sub.add_argument(flag, dest=dest, type=typ, default=_UNSET)
        sub.add_argument("--config", dest="config", default=_UNSET)
        if command == "compare":
            sub.add_argument("pairs", nargs="+", metavar="name=checkpoint")
        if command == "sweep":
            sub.add_argument("cells", nargs="*", metavar="p_init,p_add")
    return parser


def _read_config_file(path: str, allowed: dict[str, tuple]) -> dict:
    out = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ContractError(f"config: cannot read {path}: {e}") from None
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, eq, raw = text.partition("=")
        if not eq:
            raise ContractError(
                f"{path}:{lineno}: expected key=value, got {text!r}")
        key, raw = key.strip(), raw.strip()
        if key not in allowed:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
        dest, typ = allowed[key]
        try:
            out[dest] = typ(raw)
        except ValueError:
            raise ContractError(
                f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    return out


def _resolve(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < flags; rejects unknown config keys."""
    resolved = dict(_DEFAULTS[command])
    allowed = {flag[2:]: _OPTIONS[flag] for flag in _COMMAND_FLAGS[command]}
    if command in ("train", "sweep"):
        allowed |= _CONFIG_EXTRA
    config_path = getattr(args, "config", _UNSET)
    if config_path is not _UNSET:
        resolved.update(_read_config_file(config_path, allowed))
    for flag in _COMMAND_FLAGS[command]:
        dest = _OPTIONS[flag][0]
        value = getattr(args, dest)
        if value is not _UNSET:
            resolved[dest] = value
    return resolved


def _print_config(command: str, resolved: dict, extra: dict | None = None):
    shown = dict(resolved)
    if extra:
        shown.update(extra)
    for key in sorted(shown):
        print(f"[config] {command}.{key} = {shown[key]}")


def _require(resolved: dict, command: str, *keys: str):
    for key in keys:
        if resolved.get(key) is None:
            flag = "--" + key.replace("_", "-")
            raise ContractError(f"{command}: {flag} is required")


def _run_gen_data(args) -> int:
    resolved = _resolve("gen-data", args)
    _print_config("gen-data", resolved)
    _require(resolved, "gen-data", "out")
    if resolved["preset"] != "glyph12":
        raise ContractError(f"gen-data: unknown preset {resolved['preset']!r}")
    corpora = build_glyph12(resolved["seed"])
    os.makedirs(resolved["out"], exist_ok=True)
    for name, corpus in corpora.items():
        path = os.path.join(resolved["out"], f"{name}.smcp")
        save_corpus(corpus, path)
        tag = "labeled" if corpus.labeled else "unlabeled"
        print(f"wrote {path} ({len(corpus)} images, {tag})")
    return 0


def _run_train(args) -> int:
    resolved = _resolve("train", args)
    _print_config("train", resolved)
    cfg = TrainConfig(**resolved)
    _require(resolved, "train",
             "target" if cfg.mode == "finetune" else "source")
    ck, log = train(cfg)
    if log.eval_rows:
        last = log.eval_rows[-1]
        print(f"final: step={last[0]} source_loss={last[2]} "
              f"word_acc={last[7]}")
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        ck_path = os.path.join(cfg.out, "checkpoint.smck")
        save_checkpoint(ck, ck_path)
        print(f"wrote {ck_path}")
        metrics_path = os.path.join(cfg.out, "metrics.csv")
        with open(metrics_path, "w") as f:
            f.write(log.eval_csv())
        print(f"wrote {metrics_path}")
        if log.selection_rows:
            sel_path = os.path.join(cfg.out, "selection.csv")
            with open(sel_path, "w") as f:
                f.write(log.selection_csv())
            print(f"wrote {sel_path}")
    return 0


def _run_eval(args) -> int:
    resolved = _resolve("eval", args)
    _print_config("eval", resolved)
    _require(resolved, "eval", "checkpoint", "test")
    ck = load_checkpoint(resolved["checkpoint"])
    corpus = load_corpus(resolved["test"])
    result = evaluate(ck.restore(), corpus)
    print(f"word_acc={result.word_acc!r} char_acc={result.char_acc!r} "
          f"mean_entropy={result.mean_entropy!r} n={result.n}")
    return 0


def _run_compare(args) -> int:
    resolved = _resolve("compare", args)
    _print_config("compare", resolved, {"pairs": " ".join(args.pairs)})
    _require(resolved, "compare", "test")
    corpus = load_corpus(resolved["test"])
    named = []
    for pair in args.pairs:
        name, eq, path = pair.partition("=")
        if not eq or not name or not path:
            raise ContractError(
                f"compare: expected name=checkpoint, got {pair!r}")
        ck = load_checkpoint(path)
        named.append((name, evaluate(ck.restore(), corpus)))
    text, csv = compare_report(named)
    print(text)
    if resolved["out"]:
        with open(resolved["out"], "w") as f:
            f.write(csv)
        print(f"wrote {resolved['out']}")
    return 0


def _parse_cells(raw_cells: list[str]) -> list[tuple[float, float]]:
    if not raw_cells:
        return list(SWEEP_GRID)
    cells = []
    for raw in raw_cells:
        first, comma, second = raw.partition(",")
        if not comma:
            raise ContractError(f"sweep: expected p_init,p_add, got {raw!r}")
        try:
            cells.append((float(first), float(second)))
        except ValueError:
            raise ContractError(f"sweep: bad cell {raw!r}") from None
    return cells


def _run_sweep(args) -> int:
    resolved = _resolve("sweep", args)
    cells = _parse_cells(args.cells)
    _print_config("sweep", resolved,
                  {"cells": " ".join(f"{a},{b}" for a, b in cells)})
    _require(resolved, "sweep", "source", "target", "test")
    out_dir = resolved.pop("out")
    cfg = TrainConfig(mode="smile", **resolved)
    source = load_corpus(cfg.source)
    target = load_corpus(cfg.target)
    test = load_corpus(cfg.test)
    start = load_checkpoint(cfg.checkpoint) if cfg.checkpoint else None
    rows = sweep(cells, cfg, source, target, test, start)
    named = [(f"p_init={pi};p_add={pa}", res) for (pi, pa), res in rows]
    text, csv = compare_report(named)
    print(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "sweep.csv")
        with open(path, "w") as f:
            f.write(csv)
        print(f"wrote {path}")
    return 0


def _run_gradcheck(args) -> int:
    resolved = _resolve("gradcheck", args)
    _print_config("gradcheck", resolved)
    results = checks.run_all(seed=resolved["seed"])
    failures = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name}: max rel err {r.max_rel_err:.3e} "
              f"(tolerance {r.tolerance:.0e}) {status}")
        failures += 0 if r.ok else 1
    if failures:
        raise NumericalAbort(f"gradcheck: {failures} check(s) failed")
    print(f"all {len(results)} checks passed")
    return 0


_RUNNERS = {
    "gen-data": _run_gen_data,
    "train": _run_train,
    "eval": _run_eval,
    "compare": _run_compare,
    "sweep": _run_sweep,
    "gradcheck": _run_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    command = argv[0] if argv else ""
    try:
        args = _build_parser().parse_args(argv)
        return _RUNNERS[args.command](args)
    except (ContractError, FormatError, NumericalAbort) as e:
        name = type(e).__name__
        print(f"{PROG} {command}: {name}: {e}".strip(), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
