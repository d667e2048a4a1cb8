"""Command-line interface: ``cata {gen-data,train,unlearn,regret,report}``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Diagnostics go to standard error. Set ``CATA_LOG`` to ``error``, ``info`` or
``debug`` to control verbosity (default ``error``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .data import Dataset, ForgetSchedule, gen_aux_splits, gen_gaussian_blobs, load_csv, save_csv
from .engine import METHODS, UnlearnConfig, pretrain, run_continual, step_seed
from .errors import CataError, ConfigError
from .model import (
    BASELINE_DEFAULTS,
    FINETUNE_DEFAULTS,
    PRETRAIN_DEFAULTS,
    ToyClassifier,
    evaluate_accuracy,
    load_model,
    save_model,
)
from .regret import AGGREGATIONS, FAMILIES, RegretConfig, check_lemma1, run_cata_online
from .report import FORMATS, emit_report, parse_report
from .unlearn import DEFAULT_K, DEFAULT_LAMBDA

log = logging.getLogger("cata")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors raise instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        text = action.help or ""
        if action.default in (None, []) or "default" in text:
            return text
        return super()._get_help_string(action)


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--out", default=None, help=out_help)
    g.add_argument("--config", default=None,
                   help="key=value file; keys are option names without dashes, explicit flags win")


def _train_flags(p, prefix: str, defaults, title: str) -> None:
    g = p.add_argument_group(title)
    g.add_argument(f"--{prefix}lr", type=float, default=defaults.learning_rate, help="learning rate")
    g.add_argument(f"--{prefix}epochs", type=int, default=defaults.epochs, help="epochs")
    g.add_argument(f"--{prefix}batch-size", type=int, default=defaults.batch_size, help="mini-batch size")
    g.add_argument(f"--{prefix}weight-decay", type=float, default=defaults.weight_decay,
                   help="L2 penalty on the weights")
    g.add_argument(f"--{prefix}grad-clip", type=float, default=defaults.grad_clip,
                   help="clip mini-batch gradient norm (unset = off)")


def _train_config(ns, prefix: str, base):
    key = prefix.replace("-", "_")
    return replace(
        base,
        learning_rate=getattr(ns, f"{key}lr"),
        epochs=getattr(ns, f"{key}epochs"),
        batch_size=getattr(ns, f"{key}batch_size"),
        weight_decay=getattr(ns, f"{key}weight_decay"),
        grad_clip=getattr(ns, f"{key}grad_clip"),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cata", description="Conflict-averse task arithmetic for continual unlearning.",
                     formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic Gaussian-blob CSV splits", formatter_class=_Formatter)
    _common(p, "output directory (train.csv, test.csv, aux_<i>.csv)")
    p.add_argument("--classes", type=int, default=10, help="number of classes")
    p.add_argument("--features", type=int, default=16, help="feature dimension")
    p.add_argument("--train-per-class", type=int, default=200, help="training samples per class")
    p.add_argument("--test-per-class", type=int, default=50, help="test samples per class")
    p.add_argument("--separation", type=float, default=6.0, help="radius of the class-mean sphere")
    p.add_argument("--aux", type=int, default=2, help="number of extra held-out splits")

    p = sub.add_parser(
        "train", formatter_class=_Formatter, help="train the reference model on a CSV",
        description="Train the reference model from zero parameters. Hyperparameter defaults "
                    "suit the toy linear model, not large pretrained networks.",
    )
    _common(p, "model checkpoint path (required)")
    p.add_argument("--data", required=True, help="training CSV")
    _train_flags(p, "", PRETRAIN_DEFAULTS, "training")

    p = sub.add_parser(
        "unlearn", formatter_class=_Formatter, help="run a continual unlearning schedule",
        description="Process forget requests one step at a time and report accuracies. "
                    "Fine-tuning defaults are tuned for the toy linear model.",
    )
    _common(p, "report path (default: standard output)")
    p.add_argument("--model", required=True, help="pretrained model checkpoint")
    p.add_argument("--data", required=True, help="training CSV (forget sets are drawn from it)")
    p.add_argument("--test", default=None, help="evaluation CSV (default: the --data file)")
    p.add_argument("--aux", action="append", default=[], metavar="NAME=PATH",
                   help="extra evaluation split, repeatable")
    p.add_argument("--forget", required=True, help="schedule such as 3,7,1 or 3+4,7")
    p.add_argument("--method", default="cata", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=float, default=DEFAULT_LAMBDA, help="task-vector scale")
    p.add_argument("--k", type=float, default=DEFAULT_K, help="fraction of components kept per task vector")
    p.add_argument("--taskvec-dir", default=None, help="persist/reload step_<t>.tv files (cata, naive)")
    p.add_argument("--stop-after", type=int, default=None, help="stop after this many steps")
    p.add_argument("--format", default="json", choices=FORMATS, help="report format")
    _train_flags(p, "ft-", FINETUNE_DEFAULTS, "fine-tuning on forget sets (cata, naive)")
    _train_flags(p, "baseline-", BASELINE_DEFAULTS, "sequential baselines (ga, ft)")

    p = sub.add_parser("regret", formatter_class=_Formatter, help="online regret harness, CSV trace")
    _common(p, "CSV path (default: standard output)")
    p.add_argument("--T", type=int, default=256, help="horizon")
    p.add_argument("--R", type=float, default=1.0, help="comparator ball radius")
    p.add_argument("--L", type=float, default=1.0, help="Lipschitz constant")
    p.add_argument("--mu", type=float, default=0.0, help="smoothness constant")
    p.add_argument("--delta", type=float, default=0.0, help="task-vector approximation error")
    p.add_argument("--eta", type=float, default=None, help="step size (default R/((L+delta) sqrt T))")
    p.add_argument("--family", default="linear", choices=FAMILIES, help="loss family")
    p.add_argument("--dim", type=int, default=5, help="parameter dimension")
    p.add_argument("--no-project", action="store_true", help="do not project iterates (diagnostic)")
    p.add_argument("--aggregation", default="sum", choices=AGGREGATIONS,
                   help="sum: analysed update; cata: route through the sign-vote aggregate")

    p = sub.add_parser("report", formatter_class=_Formatter, help="re-emit or summarise a JSON report")
    _common(p, "output path (default: standard output)")
    p.add_argument("--input", required=True, help="JSON report")
    p.add_argument("--format", default="json", choices=FORMATS, help="output format")
    return parser


# --- config files ------------------------------------------------------------

def read_config_file(path) -> Dict[str, str]:
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def _apply_config(parser, argv: List[str]) -> None:
    """Install config-file values as subcommand defaults so explicit flags override them."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in argv if not a.startswith("-")), None)
    sp = _subparser(parser, command)
    if sp is None:
        return
    if not Path(known.config).is_file():
        raise UsageError(f"config file not found: {known.config}")
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    aliases = {"lambda": "lam"}
    defaults = {}
    for key, text in read_config_file(known.config).items():
        dest = aliases.get(key, key)
        action = actions.get(dest)
        if action is None:
            raise UsageError(f"{known.config}: unknown option {key!r} for {command}")
        if isinstance(action, argparse._AppendAction):
            defaults[dest] = [s for s in text.split(",") if s]
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = text.lower() in ("1", "true", "yes", "on")
        else:
            conv = action.type or str
            try:
                value = conv(text)
            except ValueError:
                raise UsageError(f"{known.config}: bad value {text!r} for {key}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"{known.config}: {key} must be one of {', '.join(action.choices)}")
            defaults[dest] = value
        if action.required:
            action.required = False
    sp.set_defaults(**defaults)


# --- helpers -----------------------------------------------------------------

def _existing(path: Optional[str], what: str) -> Optional[str]:
    if path is not None and not Path(path).is_file():
        raise CataError(f"{what} not found: {path}")
    return path


def _writable(path: Optional[str]) -> None:
    if path is not None:
        parent = Path(path).resolve().parent
        if not parent.is_dir():
            raise CataError(f"output directory does not exist: {parent}")


def _write_output(data: bytes, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(data)


def _align(ds: Dataset, num_classes: int, name: str) -> Dataset:
    """Give ``ds`` the model's class count (CSV files only imply ``1 + max label``)."""
    if ds.num_classes > num_classes:
        raise CataError(f"{name} has labels up to {ds.num_classes - 1} but the model has {num_classes} classes")
    if ds.num_classes == num_classes:
        return ds
    return Dataset(ds.features, ds.labels, num_classes)


def _parse_aux(items: Sequence[str]) -> Dict[str, str]:
    aux: Dict[str, str] = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--aux expects NAME=PATH, got {item!r}")
        if name in aux:
            raise UsageError(f"duplicate --aux name {name!r}")
        aux[name] = path
    return aux


# --- subcommands -------------------------------------------------------------

def cmd_gen_data(ns) -> int:
    if ns.out is None:
        raise UsageError("gen-data: --out DIR is required")
    out = Path(ns.out)
    train, test = gen_gaussian_blobs(ns.classes, ns.features, ns.train_per_class, ns.test_per_class,
                                     ns.separation, ns.seed)
    aux = gen_aux_splits(ns.classes, ns.features, ns.test_per_class, ns.separation, ns.seed, ns.aux)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    for i, ds in enumerate(aux, start=1):
        save_csv(ds, out / f"aux_{i}.csv")
    log.info("wrote %d train / %d test samples to %s", len(train), len(test), out)
    return EXIT_OK


def cmd_train(ns) -> int:
    if ns.out is None:
        raise UsageError("train: --out PATH is required")
    _existing(ns.data, "training data")
    _writable(ns.out)
    data = load_csv(ns.data)
    cfg = replace(_train_config(ns, "", PRETRAIN_DEFAULTS), seed=step_seed(ns.seed, 0))
    theta = pretrain(data, cfg)
    save_model(ToyClassifier.unflatten(theta, data.num_classes, data.num_features), ns.out)
    acc = evaluate_accuracy(theta, data).overall
    print(f"train accuracy {100 * acc:.2f}%", file=sys.stderr)
    return EXIT_OK


def cmd_unlearn(ns) -> int:
    if ns.method not in METHODS:
        raise UsageError(f"invalid --method {ns.method!r}; valid methods: {', '.join(METHODS)}")
    aux_paths = _parse_aux(ns.aux)
    _existing(ns.model, "model checkpoint")
    _existing(ns.data, "training data")
    _existing(ns.test, "test data")
    for name, path in aux_paths.items():
        _existing(path, f"aux split {name!r}")
    _writable(ns.out)
    try:
        schedule = ForgetSchedule.parse(ns.forget)
        cfg = UnlearnConfig(
            lam=ns.lam,
            k=ns.k,
            finetune=_train_config(ns, "ft-", FINETUNE_DEFAULTS),
            baseline=_train_config(ns, "baseline-", BASELINE_DEFAULTS),
            method=ns.method,
        )
    except ConfigError as exc:
        raise UsageError(f"unlearn: {exc}") from None

    model = load_model(ns.model)
    C = model.num_classes
    train = _align(load_csv(ns.data), C, ns.data)
    test = train if ns.test is None else _align(load_csv(ns.test), C, ns.test)
    aux = {name: _align(load_csv(path), C, path) for name, path in aux_paths.items()}
    report = run_continual(train, test, schedule, cfg, model.flatten(), aux=aux, seed=ns.seed,
                           taskvec_dir=ns.taskvec_dir, stop_after=ns.stop_after)
    _write_output(emit_report(report, ns.format), ns.out)
    if report.avg_score is not None:
        print(f"{cfg.method}: avg_delta {report.avg_delta:.2f} avg_score {report.avg_score:.2f}",
              file=sys.stderr)
    return EXIT_OK


def cmd_regret(ns) -> int:
    _writable(ns.out)
    try:
        cfg = RegretConfig(T=ns.T, R=ns.R, L=ns.L, mu=ns.mu, delta=ns.delta, eta=ns.eta,
                           loss_family=ns.family, project_iterates=not ns.no_project, seed=ns.seed,
                           dim=ns.dim, aggregation=ns.aggregation)
    except ConfigError as exc:
        raise UsageError(f"regret: {exc}") from None
    trace = run_cata_online(cfg)
    _write_output(trace.to_csv().encode("utf-8"), ns.out)
    lemma = "n/a (unprojected)" if ns.no_project else ("ok" if check_lemma1(trace).all_passed else "VIOLATED")
    print(f"regret {trace.regret:.6g} bound {trace.bound:.6g} "
          f"({'within' if trace.within_bound else 'EXCEEDS'} bound); cumulative-error bound {lemma}",
          file=sys.stderr)
    return EXIT_OK


def cmd_report(ns) -> int:
    _existing(ns.input, "report")
    _writable(ns.out)
    with open(ns.input, "rb") as fh:
        report = parse_report(fh.read())
    _write_output(emit_report(report, ns.format), ns.out)
    if report.avg_score is not None:
        print(f"{report.method}: {report.num_steps} steps, avg_delta {report.avg_delta:.2f} "
              f"avg_score {report.avg_score:.2f}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "unlearn": cmd_unlearn,
    "regret": cmd_regret,
    "report": cmd_report,
}


def _configure_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("CATA_LOG", "error").strip().lower(), logging.ERROR)
    logger = logging.getLogger("cata")
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_logging()
    parser = build_parser()
    try:
        if not argv:
            raise UsageError(parser.format_usage().rstrip())
        _apply_config(parser, argv)
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError(parser.format_usage().rstrip())
        return COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (CataError, OSError, np.linalg.LinAlgError) as exc:
        print(f"cata: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
