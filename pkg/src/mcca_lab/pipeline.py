"""Experiment plumbing: session folds, fitting either method, scoring subjects.

The stimulus joins the collection as the last view after time-lag
embedding; responses are used as recorded.  Every block of samples
(train/validation/test) is standardized on its own.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import dmcca, io, linear_mcca
from .core import LagConfig, ViewCollection, ViewMatrix, lag_embed, standardize
from .errors import InvalidConfigError
from .evaluation import Cca3Chain, Cca3Config, DEFAULT_DURATIONS, dprime_sweep, pearson
from .nn import TrainConfig

log = logging.getLogger(__name__)

METHODS = ("lmcca", "dgcca", "dmcca")


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "dmcca"
    lag_linear: int = linear_mcca.DEFAULT_LAG
    lag_deep: int = dmcca.DEFAULT_LAG
    shared_dim: int = 10
    mse_weight: float = dmcca.DEFAULT_MSE_WEIGHT
    mcca_eps: float | None = None
    n_sessions: int = 4
    fold: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    cca3: Cca3Config = field(default_factory=Cca3Config)
    durations: tuple = DEFAULT_DURATIONS

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_sessions < 3:
            raise InvalidConfigError(f"need at least 3 sessions (train/validation/test), got {self.n_sessions}")
        if not 0 <= self.fold < self.n_sessions:
            raise InvalidConfigError(f"fold must lie in [0, {self.n_sessions}), got {self.fold}")

    @property
    def lag(self) -> int:
        return self.lag_linear if self.method == "lmcca" else self.lag_deep

    @property
    def effective_mse_weight(self) -> float:
        return 0.0 if self.method == "dgcca" else self.mse_weight


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def session_split(n_samples: int, n_sessions: int, fold: int) -> Split:
    """Contiguous equal sessions; fold ``f`` tests on session ``f`` and
    validates on session ``f + 1`` (mod the session count)."""
    if n_sessions < 3:
        raise InvalidConfigError(f"need at least 3 sessions, got {n_sessions}")
    sessions = np.array_split(np.arange(n_samples), n_sessions)
    test = fold % n_sessions
    val = (fold + 1) % n_sessions
    train = np.concatenate([s for i, s in enumerate(sessions) if i not in (test, val)])
    return Split(train, sessions[val], sessions[test])


def stimulus_view(stimulus: ViewMatrix, lag: int) -> ViewMatrix:
    return lag_embed(stimulus, LagConfig(lag))


def block(views: ViewCollection, index: np.ndarray) -> ViewCollection:
    return ViewCollection(tuple(standardize(v) for v in views.rows(index)))


def assemble(responses: ViewCollection, stimulus: ViewMatrix, lag: int) -> ViewCollection:
    return ViewCollection((*responses.views, stimulus_view(stimulus, lag)))


@dataclass
class FittedMethod:
    """A trained denoiser: maps a standardized collection to per-view codes."""

    method: str
    lag: int
    solution: linear_mcca.MccaSolution | None = None
    model: dmcca.DmccaModel | None = None
    history: dmcca.TrainHistory | None = None

    def transform(self, views: ViewCollection) -> ViewCollection:
        if self.solution is not None:
            return linear_mcca.transform_views(views, self.solution)
        return dmcca.encode_views(self.model, views)


def fit_method(cfg: PipelineConfig, train_views: ViewCollection,
               val_views: ViewCollection | None = None, on_epoch=None) -> FittedMethod:
    if cfg.method == "lmcca":
        sol = linear_mcca.fit_mcca(train_views, subspace_dim=cfg.shared_dim, eps=cfg.mcca_eps,
                                   standardize_views=False)
        return FittedMethod("lmcca", cfg.lag, solution=sol)
    model = dmcca.build_model(train_views.dims, shared_dim=cfg.shared_dim,
                              mse_weight=cfg.effective_mse_weight, seed=cfg.train.seed)
    model, history = dmcca.train(model, train_views, cfg.train, val_views, on_epoch)
    return FittedMethod(cfg.method, cfg.lag, model=model, history=history)


def fit_on_fold(cfg: PipelineConfig, responses: ViewCollection, stimulus: ViewMatrix,
                on_epoch=None) -> FittedMethod:
    views = assemble(responses, stimulus, cfg.lag)
    split = session_split(views.n_samples, cfg.n_sessions, cfg.fold)
    return fit_method(cfg, block(views, split.train), block(views, split.validation), on_epoch)


@dataclass
class SubjectScore:
    subject: int
    correlation: float
    dprime: list


def score_subjects(fitted: FittedMethod, cfg: PipelineConfig, responses: ViewCollection,
                   stimulus: ViewMatrix, durations: Sequence[float] | None = None,
                   rate: float | None = None, part: str = "test") -> list[SubjectScore]:
    """Per-subject held-out chain correlation and d' sweep.

    The chain for subject ``n`` is fitted on the training block (codes of
    response ``n`` against codes of the stimulus view) and applied to the
    ``part`` block ("test" or "validation").
    """
    views = assemble(responses, stimulus, fitted.lag)
    split = session_split(views.n_samples, cfg.n_sessions, cfg.fold)
    fit_codes = fitted.transform(block(views, split.train))
    eval_index = split.test if part == "test" else split.validation
    eval_codes = fitted.transform(block(views, eval_index))
    rate = rate if rate is not None else stimulus.sample_rate_hz
    durations = list(cfg.durations if durations is None else durations)
    stim = len(views) - 1
    out = []
    for n in range(len(responses)):
        chain = Cca3Chain(cfg.cca3).fit(fit_codes[n], fit_codes[stim])
        a, b = chain.transform(eval_codes[n], eval_codes[stim])
        table = dprime_sweep(a, b, durations, rate) if durations else None
        out.append(SubjectScore(n, pearson(a, b), table.values if table else []))
    return out


def score_records(scores: Sequence[SubjectScore], fold: int, durations: Sequence[float],
                  method: str) -> list[dict]:
    records = []
    for s in scores:
        records.append({"kind": "corr", "method": method, "subject": s.subject, "fold": fold,
                        "duration": "all", "value": s.correlation})
        for dur, val in zip(durations, s.dprime):
            records.append({"kind": "dprime", "method": method, "subject": s.subject, "fold": fold,
                            "duration": dur, "value": val})
    return records


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("MCCA_LAB_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def run_parallel(fn: Callable, tasks: Sequence) -> list:
    """Map ``fn`` over ``tasks``; results come back in task order."""
    workers = worker_count(len(tasks))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _sweep_task(args):
    cfg, responses, stimulus, lag = args
    cfg = replace(cfg, **({"lag_linear": lag} if cfg.method == "lmcca" else {"lag_deep": lag}))
    fitted = fit_on_fold(cfg, responses, stimulus)
    scores = score_subjects(fitted, cfg, responses, stimulus, durations=[], part="validation")
    return lag, float(np.mean([s.correlation for s in scores]))


def lag_sweep(cfg: PipelineConfig, responses: ViewCollection, stimulus: ViewMatrix,
              lags: Sequence[int]) -> tuple[int, list[tuple[int, float]]]:
    """Validation correlation for each lag; returns the best lag and all results."""
    results = run_parallel(_sweep_task, [(cfg, responses, stimulus, int(l)) for l in lags])
    results.sort(key=lambda r: r[0])
    best = max(results, key=lambda r: (r[1], -r[0]))
    return best[0], results


DMCCA_MAGIC = "DMCCA1"
LMCCA_MAGIC = "LMCCA1"


def save_fitted(path, fitted: FittedMethod, meta: dict) -> None:
    """Store a fitted method plus run metadata (lag, fold, ...) in one container."""
    header = {"meta": dict(meta, method=fitted.method, lag=fitted.lag)}
    if fitted.solution is not None:
        sol = fitted.solution
        header.update(view_dims=sol.view_dims, subspace_dim=sol.subspace_dim,
                      regularization_eps=sol.regularization_eps)
        arrays = [(f"V{n}", V) for n, V in enumerate(sol.transforms)]
        arrays.append(("eigenvalues", np.asarray(sol.eigenvalues)))
        io.write_container(path, LMCCA_MAGIC, header, arrays)
    else:
        header.update(dmcca.model_header(fitted.model))
        io.write_container(path, DMCCA_MAGIC, header, dmcca.model_arrays(fitted.model))


def load_fitted(path) -> tuple[FittedMethod, dict]:
    with open(path, "rb") as fh:
        tag = fh.readline().strip().decode(errors="replace")
    if tag == LMCCA_MAGIC:
        header, arrays = io.read_container(path, LMCCA_MAGIC)
        n_views = len(header["view_dims"])
        sol = linear_mcca.MccaSolution([arrays[f"V{n}"] for n in range(n_views)], arrays["eigenvalues"],
                                       int(header["subspace_dim"]), float(header["regularization_eps"]))
        meta = header["meta"]
        return FittedMethod(meta["method"], int(meta["lag"]), solution=sol), meta
    if tag == DMCCA_MAGIC:
        header, arrays = io.read_container(path, DMCCA_MAGIC)
        meta = header["meta"]
        model = dmcca.model_from_header(header, arrays)
        return FittedMethod(meta["method"], int(meta["lag"]), model=model), meta
    raise InvalidConfigError(f"{path}: not a model file (magic {tag!r})")
