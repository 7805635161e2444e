"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Set ``DECWATT_LOG`` (DEBUG, INFO, WARNING, ...) to change verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import attach_features, read_dataset_csv, save_dataset
from .errors import ConfigInvalid, DataError, DecwattError, NumericalError
from .evaluation import CvReport, cross_validate, frame_level_differences, render_report
from .features import KINDS, count_features, read_feature_csv, write_feature_csv
from .fit import fit_model
from .models import MODEL_IDS, TrainedModel
from .simlab import GeneratorConfig, generate_dataset
from .trace import read_trace_file

log = logging.getLogger("decwatt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _model_list(values) -> list:
    out = []
    for v in values or []:
        for m in v.split(","):
            m = m.strip()
            if m not in MODEL_IDS:
                raise UsageError(f"unknown model {m!r}; choose from {', '.join(MODEL_IDS)}")
            if m not in out:
                out.append(m)
    return out


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load(path, features=None, frame_level=False):
    data = Path(path).read_bytes()
    dataset = read_dataset_csv(data.decode("utf-8").splitlines(keepends=True))
    if features:
        for d in features:
            dataset = attach_features(dataset, d)
    if frame_level:
        dataset, dropped = frame_level_differences(dataset)
        for row in dropped:
            log.info("dropped %s: %s", row.stream_id, row.reason)
    return dataset, hashlib.sha256(data).hexdigest()


# -- subcommands ------------------------------------------------------------------

def cmd_extract(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for path in args.traces:
        try:
            trace = read_trace_file(path)
            vec = count_features(trace, args.kind, fixed_point_log=args.fixed_point_log)
        except (DataError, OSError, UnicodeDecodeError) as exc:
            failures.append(f"{path}: {exc}")
            continue
        with open(out / f"{Path(path).stem}.csv", "w", encoding="utf-8", newline="") as fh:
            write_feature_csv(vec, fh)
    for line in failures:
        print(line, file=sys.stderr)
    if failures:
        print(f"{len(failures)} of {len(args.traces)} traces failed", file=sys.stderr)
        return 2
    return 0


def cmd_simulate(args) -> int:
    cfg = GeneratorConfig(
        model_id=args.model,
        noise_rel_sigma=args.noise,
        seed=args.seed,
        measure=args.measure,
        alpha=args.alpha,
        beta=args.beta,
        fixed_point_log=args.fixed_point_log,
    )
    dataset, truth = generate_dataset(cfg, args.rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    _write_text(truth_path, truth.to_json())
    return 0


def cmd_fit(args) -> int:
    dataset, digest = _load(args.dataset, args.features, args.frame_level)
    prov = {"seed": args.seed, "fold_spec": "all", "dataset_digest": digest}
    result = fit_model(dataset, args.model, provenance=prov, absolute_residuals=args.absolute_residuals)
    if not result.converged:
        log.warning("%s fit did not converge", args.model)
    doc = result.model.to_dict()
    doc["fit"] = {
        "objective_value": result.objective_value,
        "iterations": result.iterations,
        "converged": result.converged,
        "rows": len(dataset),
    }
    _write_text(Path(args.out), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_cv(args) -> int:
    models = _model_list(args.model)
    if not models:
        raise UsageError("cv needs at least one --model")
    dataset, _ = _load(args.dataset, args.features, args.frame_level)
    out = Path(args.out)
    reports = []
    for m in models:
        rep = cross_validate(dataset, m, seed=args.seed, folds=args.folds, system=args.system,
                             absolute_residuals=args.absolute_residuals)
        _write_text(out / f"cv_{m}.json", rep.to_json())
        reports.append(rep)
    doc = render_report(reports)
    _write_text(out / "report.csv", doc.csv)
    _write_text(out / "report.txt", doc.text)
    sys.stdout.write(doc.text)
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        rep = CvReport.from_json(Path(path).read_text(encoding="utf-8"))
        if args.system is not None:
            rep.system = args.system
        reports.append(rep)
    doc = render_report(reports)
    if args.out:
        out = Path(args.out)
        _write_text(out / "report.csv", doc.csv)
        _write_text(out / "report.txt", doc.text)
    sys.stdout.write(doc.text)
    return 0


def cmd_estimate(args) -> int:
    model = TrainedModel.from_json(Path(args.model_file).read_text(encoding="utf-8"))
    lines = []
    if args.dataset:
        dataset, _ = _load(args.dataset, args.features)
        for row in dataset.rows:
            feats = row.features.get(model.model_id)
            if model.model_id in KINDS and feats is None and row.features:
                feats = next(iter(row.features.values()))
            lines.append((row.stream_id, model.predict(row.meta, feats)))
    for path in args.inputs:
        with open(path, newline="", encoding="utf-8") as fh:
            vec = read_feature_csv(fh)
        lines.append((Path(path).stem, model.predict(None, vec)))
    if not lines:
        raise UsageError("estimate needs feature CSV files or --dataset")
    for sid, e in lines:
        print(f"{sid}\t{model.model_id}\t{e:.6g}")
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="decwatt", description="HEVC decoding-energy estimation toolkit")
    p.add_argument("--config", help="key=value file supplying defaults for the subcommand")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", help="count bit stream features in trace files")
    e.add_argument("traces", nargs="+")
    e.add_argument("--kind", choices=KINDS, default="FA")
    e.add_argument("--out", default=".")
    e.add_argument("--fixed-point-log", action="store_true")
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("simulate", help="generate a synthetic data set with hidden truth")
    s.add_argument("--model", choices=MODEL_IDS, default="FS")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--rows", type=int, default=None)
    s.add_argument("--measure", action="store_true", help="repeat noisy measurements until the CI rule accepts")
    s.add_argument("--alpha", type=float, default=0.99)
    s.add_argument("--beta", type=float, default=0.02)
    s.add_argument("--fixed-point-log", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="hidden-truth JSON path (default: next to --out)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one model to a data set")
    f.add_argument("dataset")
    f.add_argument("--model", choices=MODEL_IDS, required=True)
    f.add_argument("--features", action="append", help="directory of <stream_id>.csv feature files")
    f.add_argument("--frame-level", action="store_true")
    f.add_argument("--absolute-residuals", action="store_true")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("cv", help="k-fold cross-validation")
    c.add_argument("dataset")
    c.add_argument("--model", action="append", required=True, help="model id; repeat or comma-separate")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--folds", type=int, default=10)
    c.add_argument("--system", default="a")
    c.add_argument("--features", action="append")
    c.add_argument("--frame-level", action="store_true")
    c.add_argument("--absolute-residuals", action="store_true")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cv)

    est = sub.add_parser("estimate", help="estimate decoding energy with a trained model")
    est.add_argument("model_file")
    est.add_argument("inputs", nargs="*", help="feature CSV files")
    est.add_argument("--dataset")
    est.add_argument("--features", action="append")
    est.set_defaults(func=cmd_estimate)

    r = sub.add_parser("report", help="combine CV reports into one table")
    r.add_argument("reports", nargs="+")
    r.add_argument("--system", default=None, help="override the system label of every report")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def _read_config(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigInvalid(f"{path}:{n}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(sub: argparse.ArgumentParser, values: dict) -> None:
    """Install config values as subcommand defaults, so explicit flags still win."""
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigInvalid(f"config key {key!r} is not an option of {sub.prog}")
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                value = [v.strip() for v in raw.split(",") if v.strip()]
            else:
                value = action.type(raw) if action.type else raw
        except ValueError:
            raise ConfigInvalid(f"config key {key!r} has a bad value {raw!r}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigInvalid(f"config key {key!r} must be one of {list(action.choices)}")
        defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DECWATT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, rest = pre.parse_known_args(argv)
        if known.config:
            command = next((a for a in rest if not a.startswith("-")), None)
            sub = _subparser(parser, command) if command else None
            if sub is not None:
                _apply_config(sub, _read_config(known.config))
        args = parser.parse_args(rest)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except DecwattError as exc:
        print(f"decwatt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"decwatt: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"decwatt: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
