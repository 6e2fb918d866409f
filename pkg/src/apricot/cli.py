"""Command-line entry point: synth, prepare, train, calibrate, eval, attribute, analyze, pipeline.

Every stage writes into ``<out>/<stage>/`` together with the resolved run
configuration. Settings come from an optional JSON ``--config`` file and
dotted overrides such as ``--train.epochs 3``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
import typing
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import analyze as an
from . import attribute as at
from . import calibrate as cal
from . import cohort as co
from . import metrics as me
from . import phenotype as ph
from .files import MissingInputError, read_cohort, write_cohort
from .model import ModelConfig, decide_status, load_model, save_model
from .records import HEADS, PRIMARY_HEADS, AcuityState
from .synth import COMORBIDITIES, Measurement, SynthConfig, generate
from .train import Scores, TrainConfig, TrainingError, predict_scores, split_patients, train

log = logging.getLogger("apricot")

STAGES = ("synth", "prepare", "train", "calibrate", "eval", "attribute", "analyze")
MODEL_DATA_FIELDS = ("vocab_size", "n_static")


class CliError(Exception):
    category = "error"


class ConfigError(CliError):
    category = "config"


class MissingInput(CliError):
    category = "missing-input"


class TrainFirst(CliError):
    category = "train-first"


class OutputExists(CliError):
    category = "output-exists"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PrepareConfig:
    split_frac: float = 0.8
    min_prevalence: float = 0.05
    window_h: float = 4.0


@dataclass(frozen=True)
class CalibrateConfig:
    sample_frac: float = 0.1
    n_bins: int = 10


@dataclass(frozen=True)
class EvalConfig:
    n_boot: int = 100
    groupings: tuple[str, ...] = ("age", "sex", "race")


@dataclass(frozen=True)
class AttributeConfig:
    n_samples: int = 64
    steps: int = 32
    heads: tuple[str, ...] = PRIMARY_HEADS


@dataclass(frozen=True)
class AnalyzeConfig:
    horizon_h: float = 4.0
    max_day: int = 15
    outcomes: tuple[str, ...] = ("unstable", "deceased")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    synth: SynthConfig = SynthConfig()
    prepare: PrepareConfig = PrepareConfig()
    model: ModelConfig = ModelConfig(vocab_size=1, n_static=1)
    train: TrainConfig = TrainConfig()
    calibrate: CalibrateConfig = CalibrateConfig()
    eval: EvalConfig = EvalConfig()
    attribute: AttributeConfig = AttributeConfig()
    analyze: AnalyzeConfig = AnalyzeConfig()

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in MODEL_DATA_FIELDS:
            d["model"].pop(k)
        return d


SEEDED_SECTIONS = ("synth", "model", "train")


def _coerce(tp, value, key: str):
    """Convert JSON-ish ``value`` to annotation ``tp``; raises ConfigError naming ``key``."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if is_dataclass(tp):
            if not isinstance(value, dict):
                raise TypeError("expected an object")
            return _build(tp, value, key)
        if origin is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError("expected a list")
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_coerce(args[0], v, key) for v in value)
            if args and len(args) != len(value):
                raise TypeError(f"expected {len(args)} items")
            return tuple(_coerce(a, v, key) for a, v in zip(args, value)) if args else tuple(value)
        if tp is dict or origin is dict:
            if not isinstance(value, dict):
                raise TypeError("expected an object")
            return {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
        if tp is bool:
            if isinstance(value, bool):
                return value
            raise TypeError("expected true/false")
        if tp is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError("expected an integer")
            return int(value)
        if tp is float:
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if tp is str:
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if origin is typing.Union or str(origin) == "<class 'types.UnionType'>":
            non_none = [a for a in args if a is not type(None)]
            return None if value is None else _coerce(non_none[0], value, key)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc} (got {value!r})") from None
    return value


def _build(cls, values: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key {prefix + unknown[0]}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in values.items()}
    try:
        return cls(**kwargs) if kwargs or not _required(cls) else cls()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def _required(cls) -> bool:
    return any(f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
               for f in fields(cls))


def _merge_section(base, values: dict, prefix: str):
    current = {f.name: getattr(base, f.name) for f in fields(base)}
    hints = typing.get_type_hints(type(base))
    for k, v in values.items():
        if k not in current:
            raise ConfigError(f"unknown key {prefix}{k}")
        if k in MODEL_DATA_FIELDS and prefix == "model.":
            raise ConfigError(f"{prefix}{k} is derived from the data and cannot be set")
        if k == "menu":
            current[k] = tuple(_build(Measurement, m, f"{prefix}menu.") for m in v)
        else:
            current[k] = _coerce(hints[k], v, prefix + k)
    try:
        return replace(base, **current)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.')}: {exc}") from None


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(file_values: dict | None = None, overrides: dict | None = None,
                   seed: int | None = None) -> RunConfig:
    """Merge file values, dotted overrides and ``--seed`` into a RunConfig.

    The run seed feeds the synth, model and train seeds unless those are set
    explicitly. A key given both in the file and as an override with
    different values is a conflict.
    """
    nested: dict = {}
    explicit = set()

    def put(key: str, value, source: str):
        parts = key.split(".")
        node = nested
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {p} is not a section")
        explicit.add(key)
        node[parts[-1]] = value

    def flatten(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict) and k in {f.name for f in fields(RunConfig)} and prefix == "":
                yield from flatten(v, k + ".")
            else:
                yield prefix + k, v

    flat_file = dict(flatten(file_values or {}))
    for key, v in flat_file.items():
        put(key, v, "config")
    for key, v in (overrides or {}).items():
        if key in flat_file and flat_file[key] != v:
            raise ConfigError(f"conflict for {key}: config file has {flat_file[key]!r}, override has {v!r}")
        put(key, v, "override")
    if seed is not None:
        if "seed" in flat_file and flat_file["seed"] != seed:
            raise ConfigError(f"conflict for seed: config file has {flat_file['seed']!r}, --seed is {seed}")
        nested["seed"] = seed

    run = RunConfig()
    top = {}
    for k, v in nested.items():
        if k not in {f.name for f in fields(RunConfig)}:
            raise ConfigError(f"unknown key {k}")
        if isinstance(getattr(run, k), (int, float)) and not is_dataclass(getattr(run, k)):
            top[k] = _coerce(int, v, k)
        else:
            if not isinstance(v, dict):
                raise ConfigError(f"{k} must be a section")
            top[k] = _merge_section(getattr(run, k), v, k + ".")
    run = replace(run, **top)
    for sec in SEEDED_SECTIONS:
        if f"{sec}.seed" not in explicit:
            run = replace(run, **{sec: replace(getattr(run, sec), seed=run.seed)})
    return run


def run_config_from_dict(d: dict) -> RunConfig:
    return resolve_config(d)


# ---------------------------------------------------------------------------
# output helpers


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def stage_dir(out: Path, name: str, run: RunConfig, force: bool) -> Path:
    d = out / name
    if d.exists() and any(d.iterdir()):
        if not force:
            raise OutputExists(f"{d} is not empty; use a fresh --out or --force")
        shutil.rmtree(d)
    d.mkdir(parents=True, exist_ok=True)
    _dump_json(d / "run_config.json", run.to_dict())
    return d


def require(path: Path, hint: str | None = None) -> Path:
    if not path.exists():
        if hint:
            raise TrainFirst(f"{hint}: missing {path}")
        raise MissingInput(f"missing input {path}")
    return path


# ---------------------------------------------------------------------------
# stages


def stage_synth(run: RunConfig, out: Path, force: bool) -> None:
    d = stage_dir(out, "synth", run, force)
    admissions = generate(run.synth)
    write_cohort(d / "cohort", admissions, COMORBIDITIES)
    log.info("synth: %d admissions from %d patients", len(admissions), run.synth.n_patients)


def _cohort_dir(out: Path, cohort: str | None) -> Path:
    return Path(cohort) if cohort else out / "synth" / "cohort"


def stage_prepare(run: RunConfig, out: Path, force: bool, cohort: str | None = None) -> None:
    src = _cohort_dir(out, cohort)
    try:
        admissions, comorbidities = read_cohort(src)
    except MissingInputError as exc:
        raise MissingInput(str(exc)) from None
    schema = co.CohortSchema(comorbidities=tuple(comorbidities))
    d = stage_dir(out, "prepare", run, force)
    cfg = run.prepare
    kept, rejected = co.apply_admission_filters(admissions, schema)
    with open(d / "rejected.csv", "w") as fh:
        fh.write("admission_id,reason\n")
        for aid, reason in rejected:
            fh.write(f"{aid},\"{reason}\"\n")
    if not kept:
        raise MissingInput("no admission survives the cohort filters")
    dev, val = split_patients(kept, cfg.split_frac, run.seed)
    vocab = co.build_vocabulary(dev, cfg.min_prevalence)
    scaler = co.fit_scaler(dev, vocab, schema)
    (d / "vocabulary.json").write_text(vocab.to_json() + "\n")
    _dump_json(d / "scaler.json", scaler.to_dict())
    _dump_json(d / "schema.json", {"comorbidities": list(comorbidities)})
    _dump_json(d / "split.json", {"development": sorted({a.patient_id for a in dev}),
                                   "validation": sorted({a.patient_id for a in val})})
    labeled, states = [], {}
    for adm in kept:
        s, lab = ph.label_admission(adm, cfg.window_h)
        labeled.append((adm.admission_id, s, lab))
        states[adm.admission_id] = [AcuityState(x).label for x in s]
    ph.write_labels_csv(d / "labels.csv", labeled)
    _dump_json(d / "states.json", states)
    _dump_json(d / "static_table.json", {
        a.admission_id: {"age_years": a.static.age_years, "sex": a.static.sex, "race": a.static.race}
        for a in kept})
    for name, part in (("development", dev), ("validation", val)):
        co.save_windows(d / f"windows_{name}.npz", co.build_samples(part, vocab, scaler, schema, cfg.window_h))
    log.info("prepare: %d kept, %d rejected, %d variables", len(kept), len(rejected), len(vocab))


def _load_windows(out: Path, name: str):
    return co.load_windows(require(out / "prepare" / f"windows_{name}.npz"))


def stage_train(run: RunConfig, out: Path, force: bool) -> None:
    prep = out / "prepare"
    vocab = co.Vocabulary.from_json(require(prep / "vocabulary.json").read_text())
    scaler = co.ScalerStats.from_dict(json.loads(require(prep / "scaler.json").read_text()))
    dev, val = _load_windows(out, "development"), _load_windows(out, "validation")
    d = stage_dir(out, "train", run, force)
    mcfg = replace(run.model, vocab_size=len(vocab), n_static=len(scaler.static_names))
    try:
        params, history = train(mcfg, dev, val, run.train)
    except TrainingError as exc:
        raise CliError(f"training diverged: {exc}") from None
    save_model(d / "model", params, mcfg)
    history.write_csv(d / "history.csv")
    log.info("train: best epoch %d of %d", history.best_epoch, len(history.rows))


def _load_trained(out: Path):
    model_dir = out / "train" / "model"
    require(model_dir / "params.json", hint="no checkpoint found, train first")
    return load_model(model_dir)


def _validation_scores(out: Path, run: RunConfig, params, mcfg) -> Scores:
    return predict_scores(params, _load_windows(out, "validation"), mcfg)


def stage_calibrate(run: RunConfig, out: Path, force: bool) -> None:
    params, mcfg = _load_trained(out)
    scores = _validation_scores(out, run, params, mcfg)
    d = stage_dir(out, "calibrate", run, force)
    n = len(scores)
    n_cal = min(n, max(9, int(round(run.calibrate.sample_frac * n))))
    rng = np.random.default_rng(run.seed)
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, n_cal, replace=False)] = True
    calibrators, rows, curves = {}, [], []
    for j, head in enumerate(HEADS):
        c = cal.calibrate_cv3(scores.probs[chosen, j], scores.labels[chosen, j], run.seed)
        calibrators[head] = c
        held_p, held_y = scores.probs[~chosen, j], scores.labels[~chosen, j]
        after = c(held_p)
        au_before, au_after = me.auroc(held_p, held_y), me.auroc(after, held_y)
        rows.append([head, f"{cal.brier(held_p, held_y):.6f}", f"{cal.brier(after, held_y):.6f}",
                     "" if au_before is None else f"{au_before:.6f}",
                     "" if au_after is None else f"{au_after:.6f}",
                     ";".join(map(str, c.degenerate_folds))])
        for kind, p in (("raw", held_p), ("calibrated", after)):
            for mean_p, frac, count in cal.calibration_curve(p, held_y, run.calibrate.n_bins):
                curves.append([head, kind, f"{mean_p:.6f}", f"{frac:.6f}", count])
    cal.save_calibrators(d / "calibrators.json", calibrators)
    _write_rows(d / "calibration_report.csv",
                ["head", "brier_raw", "brier_calibrated", "auroc_raw", "auroc_calibrated", "degenerate_folds"], rows)
    _write_rows(d / "calibration_curve.csv", ["head", "kind", "mean_prob", "frac_pos", "count"], curves)
    log.info("calibrate: %d of %d validation windows used for fitting", n_cal, n)


def _write_rows(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def stage_eval(run: RunConfig, out: Path, force: bool) -> None:
    params, mcfg = _load_trained(out)
    scores = _validation_scores(out, run, params, mcfg)
    static_table = json.loads(require(out / "prepare" / "static_table.json").read_text())
    states = json.loads(require(out / "prepare" / "states.json").read_text())
    d = stage_dir(out, "eval", run, force)
    scores.write_csv(d / "scores.csv")
    cfg = run.eval
    reports = {"validation": {h: me.evaluate_head(scores.probs[:, j], scores.labels[:, j], cfg.n_boot, run.seed)
                              for j, h in enumerate(HEADS)}}
    for grouping in cfg.groupings:
        by_group = me.subgroup_eval(scores.probs, scores.labels, scores.admission_ids, static_table,
                                    grouping, HEADS, cfg.n_boot, run.seed)
        for g, rep in by_group.items():
            reports[f"validation:{grouping}={g}"] = rep
    rows = [r for cohort, by_head in reports.items() for h, rep in by_head.items() for r in rep.rows(h, cohort)]
    me.write_report_csv(d / "metrics.csv", rows)
    me.write_report_json(d / "metrics.json", reports)
    tm = ph.transition_matrix([[AcuityState.parse(s) for s in seq] for seq in states.values()])
    _write_rows(d / "transition_matrix.csv", ["from", "to", "count", "probability", "defined"],
                [[r, c, n, f"{p:.6f}", int(ok)] for r, c, n, p, ok in tm.as_rows()])
    main_auc = {h: reports["validation"][h].auroc for h in PRIMARY_HEADS}
    log.info("eval: %s", ", ".join(f"{h} {v[0]:.3f}" for h, v in main_auc.items() if v))


def stage_attribute(run: RunConfig, out: Path, force: bool) -> None:
    params, mcfg = _load_trained(out)
    vocab = co.Vocabulary.from_json(require(out / "prepare" / "vocabulary.json").read_text())
    scaler = co.ScalerStats.from_dict(json.loads(require(out / "prepare" / "scaler.json").read_text()))
    val = _load_windows(out, "validation")
    d = stage_dir(out, "attribute", run, force)
    cfg = run.attribute
    rng = np.random.default_rng(run.seed)
    pick = np.sort(rng.choice(len(val), min(cfg.n_samples, len(val)), replace=False))
    attributions = []
    for i in pick:
        attributions += at.integrated_gradients_heads(params, val[i], cfg.heads, mcfg, cfg.steps)
    rows = at.rank_variables(attributions, vocab.names, scaler.static_names, cfg.heads)
    at.write_ranking_csv(d / "ranking.csv", rows)
    at.write_trajectories(d / "trajectories.jsonl", attributions, vocab.names, scaler.static_names)
    gaps = [a.completeness_gap / max(1e-6, abs(a.f_input - a.f_baseline)) for a in attributions]
    _dump_json(d / "summary.json", {"samples": len(pick), "steps": cfg.steps,
                                    "top_variables": at.top_variables(rows, 5),
                                    "max_relative_completeness_gap": round(max(gaps), 8) if gaps else None})
    log.info("attribute: top variables %s", ", ".join(at.top_variables(rows, 3)))


def stage_analyze(run: RunConfig, out: Path, force: bool) -> None:
    scores_path = out / "eval" / "scores.csv"
    require(scores_path, hint="no evaluation scores found, run eval first")
    scores = Scores.read_csv(scores_path)
    metrics = json.loads(require(out / "eval" / "metrics.json").read_text())["validation"]
    d = stage_dir(out, "analyze", run, force)
    cfg = run.analyze
    thresholds = np.array([metrics[h]["youden_threshold"] if metrics[h]["youden_threshold"] is not None
                           else np.inf for h in HEADS])
    decisions = scores.probs >= thresholds
    leads = {}
    for outcome in cfg.outcomes:
        j = HEADS.index(outcome)
        leads[outcome] = an.fp_lead_analysis(decisions[:, j], scores.labels[:, j], scores.admission_ids,
                                             scores.window_index, cfg.horizon_h, run.prepare.window_h)
    an.write_lead_summary_csv(d / "lead_time_summary.csv", leads)
    an.write_lead_histogram_csv(d / "lead_time_histogram.csv", leads)
    predicted = [decide_status(b) for b in decisions]
    true = [AcuityState(int(np.argmax(y[:4]))) for y in scores.labels]
    matrix, counts = an.status_confusion(predicted, true)
    an.write_confusion_csv(d / "status_confusion.csv", matrix, counts)
    by_adm_true, by_adm_pred = {}, {}
    for i, aid in enumerate(scores.admission_ids):
        by_adm_true.setdefault(aid, []).append((scores.window_index[i], true[i]))
        by_adm_pred.setdefault(aid, []).append((scores.window_index[i], predicted[i]))
    seq = lambda m: {k: [s for _, s in sorted(v)] for k, v in m.items()}  # noqa: E731
    an.write_daily_csv(d / "daily_distribution.csv", {
        "truth": an.daily_distribution(seq(by_adm_true), cfg.max_day),
        "predicted": an.daily_distribution(seq(by_adm_pred), cfg.max_day)})
    log.info("analyze: %s", ", ".join(
        f"{o} sens {r.sensitivity or 0:.2f}->{r.adjusted_sensitivity or 0:.2f}" for o, r in leads.items()))


def stage_pipeline(run: RunConfig, out: Path, force: bool, cohort: str | None = None) -> None:
    if cohort is None:
        stage_synth(run, out, force)
    stage_prepare(run, out, force, cohort)
    for fn in (stage_train, stage_calibrate, stage_eval, stage_attribute, stage_analyze):
        fn(run, out, force)


# ---------------------------------------------------------------------------
# argument handling


def _split_overrides(extra: list[str]) -> dict:
    overrides = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=")[0]:
            raise ConfigError(f"unrecognised argument {tok}")
        if "=" in tok:
            key, raw = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            key, raw = tok[2:], extra[i + 1]
            i += 2
        overrides[key] = parse_value(raw)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apricot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", default="runs/default", help="output directory")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--force", action="store_true", help="overwrite existing stage outputs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            p.add_argument("--patients", type=int, help="shorthand for --synth.n_patients")
        if name in ("prepare", "pipeline"):
            p.add_argument("--cohort", help="cohort directory (default: <out>/synth/cohort)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "pipeline" else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        overrides = _split_overrides(extra)
        if getattr(args, "patients", None) is not None:
            overrides["synth.n_patients"] = args.patients
        file_values = None
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise MissingInput(f"missing input {path}")
            try:
                file_values = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        run = resolve_config(file_values, overrides, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "run_config.json", run.to_dict())
        handlers = {
            "synth": stage_synth, "prepare": stage_prepare, "train": stage_train,
            "calibrate": stage_calibrate, "eval": stage_eval, "attribute": stage_attribute,
            "analyze": stage_analyze, "pipeline": stage_pipeline,
        }
        if args.command in ("prepare", "pipeline"):
            handlers[args.command](run, out, args.force, args.cohort)
        else:
            handlers[args.command](run, out, args.force)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
