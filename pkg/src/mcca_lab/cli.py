"""Command line entry point: ``mcca-lab {synth,train,eval,compare,sweep}``.

Exit codes: 0 success, 2 usage/config/data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .core import ViewCollection, ViewMatrix
from .errors import InvalidConfigError, MccaLabError, NumericalError, ShapeError, TrainingDivergedError
from .evaluation import Cca3Config
from .nn import TrainConfig
from .pipeline import (
    METHODS,
    PipelineConfig,
    fit_on_fold,
    lag_sweep,
    load_fitted,
    save_fitted,
    score_records,
    score_subjects,
)
from .synth import SynthConfig, generate, generate_stimulus_response

log = logging.getLogger("mcca_lab")

MANIFEST = "manifest.txt"
MODEL_FILE = "model.bin"
TRAIN_LOG = "train_log.txt"


def _int_or_list(text: str):
    items = io.parse_list(text, int)
    return items[0] if len(items) == 1 else tuple(items)


def _int_tuple(text: str) -> tuple:
    return tuple(io.parse_list(text, int))


def _optional(cast):
    return lambda text: None if text.strip().lower() in ("none", "") else cast(text)


SYNTH_KEYS = {
    "num_views": int,
    "channels_per_view": _int_or_list,
    "samples": int,
    "latent_dim": int,
    "snr_db": io.parse_float,
    "mixing": str,
    "seed": int,
    "smoothing": int,
    "sample_rate_hz": float,
    "stimulus_lag": int,
    "planted_corr": float,
    "mode": str,
}

PIPELINE_KEYS = {
    "method": str,
    "lag_linear": int,
    "lag_deep": int,
    "shared_dim": int,
    "mse_weight": float,
    "mcca_eps": _optional(float),
    "n_sessions": int,
    "fold": int,
    "durations": lambda t: tuple(io.parse_list(t, float)),
    # training
    "learning_rate": float,
    "optimizer": str,
    "epochs": int,
    "batch_size": int,
    "dropout_rate": float,
    "seed": int,
    # scoring chain
    "response_widths": _int_tuple,
    "stimulus_widths": _int_tuple,
    "response_dim": _optional(int),
    "stimulus_dim": int,
    "cca_reg": _optional(float),
    # sweep
    "lags": _int_tuple,
}

TRAIN_FIELDS = ("learning_rate", "optimizer", "epochs", "batch_size", "dropout_rate", "seed")
CCA3_FIELDS = {"response_widths": "response_widths", "stimulus_widths": "stimulus_widths",
               "response_dim": "response_dim", "stimulus_dim": "stimulus_dim", "cca_reg": "reg"}


def parse_config(path, schema: dict) -> dict:
    if path is None:
        return {}
    try:
        raw = io.read_kv(path)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for key, text in raw.items():
        if key not in schema:
            raise InvalidConfigError(f"unknown config key {key!r} in {path}")
        try:
            out[key] = schema[key](text)
        except ValueError as exc:
            raise InvalidConfigError(f"bad value for config key {key!r}: {text!r} ({exc})") from None
    return out


def pipeline_config(values: dict, method: str | None = None, seed: int | None = None,
                    fold: int | None = None) -> PipelineConfig:
    values = dict(values)
    if method is not None:
        values["method"] = method
    if seed is not None:
        values["seed"] = seed
    if fold is not None:
        values["fold"] = fold
    train_kw = {k: values.pop(k) for k in TRAIN_FIELDS if k in values}
    cca_kw = {CCA3_FIELDS[k]: values.pop(k) for k in list(values) if k in CCA3_FIELDS}
    values.pop("lags", None)
    train = TrainConfig(**train_kw)
    cfg = PipelineConfig(train=train, cca3=Cca3Config(**cca_kw), **values)
    # each fold gets its own RNG stream
    return replace(cfg, train=replace(train, seed=train.seed + cfg.fold))


# -- datasets ---------------------------------------------------------------

def write_dataset(out: Path, stimulus: ViewMatrix, responses: ViewCollection, truth,
                  settings: dict) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(exist_ok=True)
    manifest = []
    for n, v in enumerate(responses):
        name = f"view_{n:02d}.mvwm"
        io.write_matrix(out / name, v.data, {"view_id": n, "sample_rate_hz": v.sample_rate_hz})
        manifest.append({"entry": "view", "index": n, "file": name,
                         "rows": v.n_samples, "cols": v.n_channels})
    io.write_matrix(out / "stimulus.mvwm", stimulus.data,
                    {"view_id": "stimulus", "sample_rate_hz": stimulus.sample_rate_hz})
    manifest.append({"entry": "stimulus", "index": len(responses), "file": "stimulus.mvwm",
                     "rows": stimulus.n_samples, "cols": stimulus.n_channels})
    io.write_matrix(out / "truth" / "latents.mvwm", truth.latents)
    for n, M in enumerate(truth.mixing_matrices):
        io.write_matrix(out / "truth" / f"mixing_{n:02d}.mvwm", M)
        io.write_matrix(out / "truth" / f"noise_{n:02d}.mvwm", truth.noise[n])
        io.write_matrix(out / "truth" / f"oracle_{n:02d}.mvwm", truth.oracle_projections[n])
    io.write_kv(out / "synth.cfg", settings)
    io.write_records(out / MANIFEST, manifest)
    return manifest


def load_dataset(path) -> tuple[ViewCollection, ViewMatrix]:
    path = Path(path)
    if not (path / MANIFEST).exists():
        raise InvalidConfigError(f"{path} has no {MANIFEST}; not a dataset directory")
    views, stimulus = [], None
    for rec in io.read_records(path / MANIFEST):
        meta = io.read_matrix_meta(path / rec["file"])
        rate = float(meta.get("sample_rate_hz", 64.0))
        data = io.read_matrix(path / rec["file"])
        if data.shape != (int(rec["rows"]), int(rec["cols"])):
            raise ShapeError(f"{rec['file']} is {data.shape}, manifest says {rec['rows']}x{rec['cols']}")
        if rec["entry"] == "stimulus":
            stimulus = ViewMatrix(data, view_id=int(rec["index"]), sample_rate_hz=rate)
        else:
            views.append(ViewMatrix(data, view_id=int(rec["index"]), sample_rate_hz=rate))
    if stimulus is None or not views:
        raise InvalidConfigError(f"{path}/{MANIFEST} needs at least one view and a stimulus entry")
    return ViewCollection(tuple(views)), stimulus


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    values = parse_config(args.config, SYNTH_KEYS)
    if args.seed is not None:
        values["seed"] = args.seed
    mode = values.pop("mode", "stimulus")
    planted = values.pop("planted_corr", 0.9)
    cfg = SynthConfig(**values)
    if mode == "stimulus":
        stimulus, responses, truth = generate_stimulus_response(cfg, planted)
    elif mode == "latent":
        responses, truth = generate(cfg)
        # the first latent plays the stimulus
        stimulus = ViewMatrix(truth.latents[:, :1], view_id=cfg.num_views, sample_rate_hz=cfg.sample_rate_hz)
    else:
        raise InvalidConfigError(f"mode must be 'stimulus' or 'latent', got {mode!r}")
    settings = {**asdict(cfg), "mode": mode, "planted_corr": planted}
    manifest = write_dataset(Path(args.out), stimulus, responses, truth, settings)
    for rec in manifest:
        print(io.format_record(rec))
    return 0


def cmd_train(args) -> int:
    cfg = pipeline_config(parse_config(args.config, PIPELINE_KEYS), args.method, args.seed, args.fold)
    responses, stimulus = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / TRAIN_LOG
    log_path.write_text("")

    def on_epoch(tr, val):
        with open(log_path, "a") as fh:
            fh.write(io.format_record({"phase": "train", **tr.as_record()}) + "\n")
            fh.write(io.format_record({"phase": "validation", **val.as_record()}) + "\n")

    try:
        fitted = fit_on_fold(cfg, responses, stimulus, on_epoch=on_epoch)
    except TrainingDivergedError as exc:
        with open(log_path, "a") as fh:
            last = exc.last_report.as_record() if exc.last_report else {}
            fh.write(io.format_record({"phase": "diverged", **last}) + "\n")
        raise
    if fitted.solution is not None:
        sol = fitted.solution
        io.write_records(log_path, [{"phase": "fit", "component": k, "eigenvalue": float(ev),
                                     "implied_isc": float(isc)}
                                    for k, (ev, isc) in enumerate(zip(sol.eigenvalues, sol.implied_isc()))])
    meta = {"fold": cfg.fold, "n_sessions": cfg.n_sessions, "seed": cfg.train.seed,
            "mse_weight": cfg.effective_mse_weight if cfg.method != "lmcca" else 0.0}
    save_fitted(out / MODEL_FILE, fitted, meta)
    print(f"wrote {out / MODEL_FILE} ({cfg.method}, lag {cfg.lag}, fold {cfg.fold})")
    return 0


def _check_dims(fitted, responses, stimulus):
    expected = fitted.solution.view_dims if fitted.solution is not None else fitted.model.view_dims
    found = [*responses.dims, stimulus.n_channels * fitted.lag]
    if len(expected) != len(found):
        raise ShapeError(f"model has {len(expected)} views, dataset gives {len(found)}")
    for n, (e, f) in enumerate(zip(expected, found)):
        if e != f:
            raise ShapeError(f"view {n}: model expects {e} channels, dataset has {f}")


def cmd_eval(args) -> int:
    fitted, meta = load_fitted(args.model)
    values = parse_config(args.config, PIPELINE_KEYS)
    values.update(method=fitted.method, fold=int(meta["fold"]), n_sessions=int(meta["n_sessions"]))
    values["lag_linear" if fitted.method == "lmcca" else "lag_deep"] = fitted.lag
    if args.durations is not None:
        values["durations"] = tuple(io.parse_list(args.durations, float))
    cfg = pipeline_config(values)
    responses, stimulus = load_dataset(args.data)
    _check_dims(fitted, responses, stimulus)
    scores = score_subjects(fitted, cfg, responses, stimulus)
    records = score_records(scores, cfg.fold, cfg.durations, cfg.method)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        io.write_records(args.out, records)
    for s in scores:
        print(f"subject {s.subject:3d}  corr {s.correlation: .4f}  "
              + " ".join(f"{v:7.3f}" for v in s.dprime))
    return 0


def _record_key(rec):
    return rec.get("kind", ""), int(rec["subject"]), int(rec["fold"]), rec["duration"]


def _duration_order(d: str):
    return (0, 0.0) if d == "all" else (1, float(d))


def compare_records(a: list[dict], b: list[dict]) -> tuple[list[dict], list[str]]:
    """Pair records on (kind, subject, fold, duration); per-subject means and differences."""
    va = {_record_key(r): float(r["value"]) for r in a}
    vb = {_record_key(r): float(r["value"]) for r in b}
    missing = sorted(set(va) ^ set(vb))
    if missing:
        names = [f"kind={k} subject={s} fold={f} duration={d} only in "
                 + ("first" if (k, s, f, d) in va else "second") for k, s, f, d in missing]
        raise InvalidConfigError("records are not aligned; unmatched keys:\n  " + "\n  ".join(names))
    groups = defaultdict(lambda: defaultdict(list))
    for key in va:
        kind, subject, _, duration = key
        groups[(kind, duration)][subject].append((va[key], vb[key]))
    out, lines = [], []
    for kind, duration in sorted(groups, key=lambda g: (g[0], _duration_order(g[1]))):
        lines.append(f"{kind} duration={duration}")
        lines.append(f"  {'subject':>7}  {'first':>9}  {'second':>9}  {'diff':>9}")
        diffs = []
        for subject in sorted(groups[(kind, duration)]):
            pairs = np.array(groups[(kind, duration)][subject])
            ma, mb = pairs.mean(axis=0)
            diffs.append(mb - ma)
            lines.append(f"  {subject:>7}  {ma:9.4f}  {mb:9.4f}  {mb - ma:+9.4f}")
            out.append({"kind": "subject", "metric": kind, "duration": duration, "subject": subject,
                        "first": float(ma), "second": float(mb), "diff": float(mb - ma)})
        mean = float(np.mean(diffs))
        lines.append(f"  {'mean':>7}  {'':9}  {'':9}  {mean:+9.4f}")
        out.append({"kind": "summary", "metric": kind, "duration": duration,
                    "mean_improvement": mean, "subjects": len(diffs)})
    return out, lines


def cmd_compare(args) -> int:
    try:
        a, b = io.read_records(args.first), io.read_records(args.second)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read records: {exc}") from None
    records, lines = compare_records(a, b)
    print("\n".join(lines))
    if args.out:
        io.write_records(args.out, records)
    return 0


def cmd_sweep(args) -> int:
    values = parse_config(args.config, PIPELINE_KEYS)
    lags = values.get("lags")
    if args.lags:
        lags = _int_tuple(args.lags)
    if not lags:
        raise InvalidConfigError("sweep needs lags (--lags or a 'lags' config key)")
    cfg = pipeline_config(values, args.method, args.seed, args.fold)
    responses, stimulus = load_dataset(args.data)
    best, results = lag_sweep(cfg, responses, stimulus, lags)
    records = [{"kind": "sweep", "method": cfg.method, "fold": cfg.fold, "lag": lag, "value": v}
               for lag, v in results]
    records.append({"kind": "best", "method": cfg.method, "fold": cfg.fold, "lag": best})
    if args.out:
        io.write_records(args.out, records)
    for rec in records:
        print(io.format_record(rec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcca-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a method on one fold")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on its held-out session")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--durations")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired comparison of two score files")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="validation score over a list of lags")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lags")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MccaLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
