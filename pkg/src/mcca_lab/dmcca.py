"""Deep multiway CCA: per-view encoders, a shared concatenated code, per-view decoders.

Every view ``n`` has an encoder ``f_n`` producing a ``shared_dim`` code.  The
codes are concatenated into ``y`` (width ``N * shared_dim``) and every decoder
reconstructs its own view from the whole of ``y``.  Training maximizes

    combined = rho - mse_weight * sum_n MSE(x_n, decoder_n(y))

where ``rho`` sums per-component Pearson correlations of the codes over all
ordered view pairs.  ``mse_weight = 0`` is plain deep generalized CCA.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .core import ViewCollection
from .errors import InvalidBatchError, InvalidConfigError, ShapeError, TrainingDivergedError
from .nn import LayerSpec, MlpParams, TrainConfig

log = logging.getLogger(__name__)

CORR_EPS = 1e-8
DEFAULT_LAG = 60
DEFAULT_MSE_WEIGHT = 0.01
ENCODER_HIDDEN = (60, 60)
DECODER_HIDDEN = (60, 110)


def correlation_objective(encoded: Sequence[np.ndarray], eps: float = CORR_EPS
                          ) -> tuple[float, list[np.ndarray]]:
    """Sum of per-component Pearson correlations over ordered view pairs.

    Returns ``rho`` and its gradient with respect to each encoded matrix.
    Each correlation is ``cov / sqrt((var_i + eps) (var_j + eps))`` with
    unbiased batch moments.
    """
    H = [np.asarray(h, dtype=np.float64) for h in encoded]
    shapes = {h.shape for h in H}
    if len(shapes) != 1 or H[0].ndim != 2:
        raise ShapeError(f"encoded views must share one 2-D shape, got {sorted(shapes)}")
    B = H[0].shape[0]
    if B < 3:
        raise InvalidBatchError(f"correlation needs a batch of at least 3 samples, got {B}")
    n = B - 1
    centered = [h - h.mean(axis=0) for h in H]
    scales = [np.sqrt(np.sum(c * c, axis=0) / n + eps) for c in centered]
    unit = [c / s for c, s in zip(centered, scales)]
    total = np.sum(unit, axis=0)
    # sum over i != j of <u_i, u_j> = |sum u|^2 - sum |u_i|^2
    rho = (np.sum(total * total) - sum(np.sum(u * u) for u in unit)) / n

    grads = []
    for c, s, u in zip(centered, scales, unit):
        g = 2.0 / n * (total - u)
        gc = g / s - c * (np.sum(c * g, axis=0) / (n * s**3))
        grads.append(gc - gc.mean(axis=0))
    return float(rho), grads


@dataclass(frozen=True)
class LossReport:
    rho: float
    per_view_mse: tuple
    combined: float
    epoch: int = 0

    @classmethod
    def make(cls, rho, per_view_mse, mse_weight, epoch=0) -> "LossReport":
        mse = tuple(float(m) for m in per_view_mse)
        return cls(float(rho), mse, float(rho - mse_weight * sum(mse)), epoch)

    def as_record(self) -> dict:
        rec = {"epoch": self.epoch, "rho": self.rho, "combined": self.combined}
        for i, m in enumerate(self.per_view_mse):
            rec[f"mse{i}"] = m
        return rec


@dataclass
class DmccaModel:
    encoders: list
    decoders: list
    encoder_specs: list
    decoder_specs: list
    view_dims: list
    shared_dim: int = 10
    mse_weight: float = DEFAULT_MSE_WEIGHT
    seed: int = 0

    def __post_init__(self):
        N = len(self.view_dims)
        if not (len(self.encoders) == len(self.decoders) == len(self.encoder_specs)
                == len(self.decoder_specs) == N):
            raise ShapeError("encoders, decoders and view_dims must all have one entry per view")
        if self.mse_weight < 0:
            raise InvalidConfigError(f"mse_weight must be non-negative, got {self.mse_weight}")
        for n in range(N):
            enc, dec = self.encoder_specs[n], self.decoder_specs[n]
            if enc[0].in_dim != self.view_dims[n] or enc[-1].out_dim != self.shared_dim:
                raise ShapeError(f"encoder {n} maps {enc[0].in_dim}->{enc[-1].out_dim}, "
                                 f"expected {self.view_dims[n]}->{self.shared_dim}")
            if dec[0].in_dim != N * self.shared_dim or dec[-1].out_dim != self.view_dims[n]:
                raise ShapeError(f"decoder {n} maps {dec[0].in_dim}->{dec[-1].out_dim}, "
                                 f"expected {N * self.shared_dim}->{self.view_dims[n]}")

    @property
    def n_views(self) -> int:
        return len(self.view_dims)

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for p in [*self.encoders, *self.decoders]:
            out.extend(p.arrays())
        return out

    def set_param_arrays(self, arrays: list[np.ndarray]) -> None:
        it = iter(arrays)
        for p in [*self.encoders, *self.decoders]:
            p.weights = [next(it) for _ in p.weights]
            p.biases = [next(it) for _ in p.biases]

    def copy(self) -> "DmccaModel":
        return DmccaModel([e.copy() for e in self.encoders], [d.copy() for d in self.decoders],
                          self.encoder_specs, self.decoder_specs, list(self.view_dims),
                          self.shared_dim, self.mse_weight, self.seed)


def build_model(view_dims: Sequence[int], shared_dim: int = 10,
                mse_weight: float = DEFAULT_MSE_WEIGHT,
                encoder_hidden: Sequence[int] = ENCODER_HIDDEN,
                decoder_hidden: Sequence[int] = DECODER_HIDDEN,
                slope: float = nn.LEAKY_SLOPE,
                encoder_output_activation: str = "leaky_relu",
                seed: int = 0) -> DmccaModel:
    """Fresh model with shape-balanced uniform weights and zero biases.

    Encoders use leaky ReLU everywhere; decoders use leaky ReLU on hidden
    layers and a linear output.
    """
    view_dims = [int(d) for d in view_dims]
    if len(view_dims) < 2:
        raise InvalidConfigError("need at least two views")
    if shared_dim < 1:
        raise InvalidConfigError(f"shared_dim must be positive, got {shared_dim}")
    rng = np.random.default_rng(seed)
    N = len(view_dims)
    enc_specs, dec_specs, encoders, decoders = [], [], [], []
    for d in view_dims:
        specs = nn.mlp_specs([d, *encoder_hidden, shared_dim], "leaky_relu",
                             encoder_output_activation, slope)
        enc_specs.append(specs)
        encoders.append(nn.init_params(specs, rng))
    for d in view_dims:
        specs = nn.mlp_specs([N * shared_dim, *decoder_hidden, d], "leaky_relu", "linear", slope)
        dec_specs.append(specs)
        decoders.append(nn.init_params(specs, rng))
    return DmccaModel(encoders, decoders, enc_specs, dec_specs, view_dims,
                      shared_dim, float(mse_weight), int(seed))


@dataclass
class ModelGrads:
    encoders: list
    decoders: list

    def arrays(self) -> list[np.ndarray]:
        out = []
        for p in [*self.encoders, *self.decoders]:
            out.extend(p.arrays())
        return out


def _check_batch(model: DmccaModel, batch: Sequence[np.ndarray]) -> list[np.ndarray]:
    arrays = [np.asarray(x, dtype=np.float64) for x in batch]
    if len(arrays) != model.n_views:
        raise ShapeError(f"model has {model.n_views} views, got {len(arrays)}")
    dims = [a.shape[1] if a.ndim == 2 else None for a in arrays]
    if dims != list(model.view_dims):
        raise ShapeError(f"view widths {dims} do not match model view_dims {list(model.view_dims)}")
    return arrays


def _encode(model, arrays, masks):
    outs, caches = [], []
    for n, x in enumerate(arrays):
        m = None if masks is None else masks["encoders"][n]
        h, c = nn.forward(model.encoders[n], model.encoder_specs[n], x, m)
        outs.append(h)
        caches.append(c)
    return outs, caches


def dgcca_loss(model: DmccaModel, batch: Sequence[np.ndarray], masks=None
               ) -> tuple[LossReport, ModelGrads]:
    """Correlation-only objective through the encoders; decoders are ignored."""
    arrays = _check_batch(model, batch)
    codes, caches = _encode(model, arrays, masks)
    rho, code_grads = correlation_objective(codes)
    enc_grads = [nn.backward(c, g)[0] for c, g in zip(caches, code_grads)]
    dec_grads = [MlpParams.zeros_like(p) for p in model.decoders]
    report = LossReport(rho, tuple(0.0 for _ in arrays), rho)
    return report, ModelGrads(enc_grads, dec_grads)


def combined_loss(model: DmccaModel, batch: Sequence[np.ndarray], masks=None
                  ) -> tuple[LossReport, ModelGrads]:
    """Loss report and gradient of ``rho - mse_weight * sum MSE`` (to be maximized)."""
    arrays = _check_batch(model, batch)
    codes, enc_caches = _encode(model, arrays, masks)
    rho, code_grads = correlation_objective(codes)
    y = np.hstack(codes)

    mses, dec_grads = [], []
    y_grad = np.zeros_like(y)
    for n, x in enumerate(arrays):
        m = None if masks is None else masks["decoders"][n]
        xhat, cache = nn.forward(model.decoders[n], model.decoder_specs[n], y, m)
        resid = xhat - x
        mses.append(float(np.mean(resid * resid)))
        upstream = (-model.mse_weight * 2.0 / resid.size) * resid
        g_params, g_y = nn.backward(cache, upstream)
        dec_grads.append(g_params)
        y_grad += g_y

    d = model.shared_dim
    enc_grads = []
    for n, cache in enumerate(enc_caches):
        g = code_grads[n] + y_grad[:, n * d:(n + 1) * d]
        enc_grads.append(nn.backward(cache, g)[0])
    return LossReport.make(rho, mses, model.mse_weight), ModelGrads(enc_grads, dec_grads)


def evaluate_loss(model: DmccaModel, views, epoch: int = 0) -> LossReport:
    arrays = _check_batch(model, ViewCollection.of(views).arrays())
    report, _ = combined_loss(model, arrays)
    return LossReport(report.rho, report.per_view_mse, report.combined, epoch)


@dataclass
class TrainHistory:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    best_epoch: int = 0


def _batches(T: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(T)
    n_batches = max(1, T // batch_size)
    return np.array_split(order, n_batches)


def train(model: DmccaModel, views, cfg: TrainConfig, validation=None,
          on_epoch: Callable[[LossReport, LossReport], None] | None = None
          ) -> tuple[DmccaModel, TrainHistory]:
    """Adam (or SGD) descent on ``-combined`` with best-validation selection.

    Epoch 0 in the history is the untrained model.  Training reports are
    averages of the mini-batch reports; validation reports are full batch
    without dropout.  ``on_epoch(train_report, val_report)`` runs after every
    epoch, including epoch 0.  Returns a new model; ``model`` is left
    untouched.
    """
    views = ViewCollection.of(views)
    train_arrays = _check_batch(model, views.arrays())
    val_views = ViewCollection.of(validation) if validation is not None else views
    _check_batch(model, val_views.arrays())
    T = views.n_samples
    if T < 3:
        raise InvalidBatchError(f"need at least 3 training samples, got {T}")

    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    history = TrainHistory()
    history.train.append(evaluate_loss(model, views, 0))
    best = evaluate_loss(model, val_views, 0)
    history.validation.append(best)
    if on_epoch:
        on_epoch(history.train[0], best)
    best_arrays = [a.copy() for a in model.param_arrays()]
    state = nn.OptimizerState()
    last_report = best

    for epoch in range(1, cfg.epochs + 1):
        reports = []
        for idx in _batches(T, cfg.batch_size, rng):
            batch = [x[idx] for x in train_arrays]
            masks = None
            if cfg.dropout_rate > 0:
                masks = {
                    "encoders": [nn.dropout_masks(s, len(idx), cfg.dropout_rate, rng)
                                 for s in model.encoder_specs],
                    "decoders": [nn.dropout_masks(s, len(idx), cfg.dropout_rate, rng)
                                 for s in model.decoder_specs],
                }
            # overflow is caught below as a non-finite loss or gradient
            with np.errstate(over="ignore", invalid="ignore"):
                report, grads = combined_loss(model, batch, masks)
            if not np.isfinite(report.combined):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", last_report)
            descent = [-g for g in grads.arrays()]
            try:
                new_arrays, state = nn.optimizer_step(model.param_arrays(), descent, state, cfg)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch}", last_report) from None
            model.set_param_arrays(new_arrays)
            reports.append(report)
            last_report = report

        mean_report = LossReport.make(np.mean([r.rho for r in reports]),
                                      np.mean([r.per_view_mse for r in reports], axis=0),
                                      model.mse_weight, epoch)
        history.train.append(mean_report)
        with np.errstate(over="ignore", invalid="ignore"):
            val = evaluate_loss(model, val_views, epoch)
        if not np.isfinite(val.combined):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}", last_report)
        history.validation.append(val)
        if on_epoch:
            on_epoch(mean_report, val)
        if val.combined > best.combined:
            best = val
            best_arrays = [a.copy() for a in model.param_arrays()]
            history.best_epoch = epoch
        log.debug("epoch %d train rho %.4f val combined %.4f", epoch, mean_report.rho, val.combined)

    model.set_param_arrays(best_arrays)
    return model, history


def encode_views(model: DmccaModel, views) -> ViewCollection:
    views = ViewCollection.of(views)
    arrays = _check_batch(model, views.arrays())
    codes, _ = _encode(model, arrays, None)
    return ViewCollection(tuple(v.with_data(c) for v, c in zip(views, codes)))


def model_arrays(model: DmccaModel) -> list[tuple[str, np.ndarray]]:
    named = []
    for kind, nets in (("enc", model.encoders), ("dec", model.decoders)):
        for n, p in enumerate(nets):
            for i, w in enumerate(p.weights):
                named.append((f"{kind}{n}.W{i}", w))
            for i, b in enumerate(p.biases):
                named.append((f"{kind}{n}.b{i}", b))
    return named


def _specs_to_json(specs):
    return [[s.in_dim, s.out_dim, s.activation, s.slope] for s in specs]


def _specs_from_json(items):
    return [LayerSpec(int(i), int(o), a, float(s)) for i, o, a, s in items]


def model_header(model: DmccaModel) -> dict:
    return {
        "view_dims": list(model.view_dims),
        "shared_dim": model.shared_dim,
        "mse_weight": model.mse_weight,
        "seed": model.seed,
        "encoder_specs": [_specs_to_json(s) for s in model.encoder_specs],
        "decoder_specs": [_specs_to_json(s) for s in model.decoder_specs],
    }


def model_from_header(header: dict, arrays: dict) -> DmccaModel:
    enc_specs = [_specs_from_json(s) for s in header["encoder_specs"]]
    dec_specs = [_specs_from_json(s) for s in header["decoder_specs"]]

    def nets(kind, specs):
        return [MlpParams([arrays[f"{kind}{n}.W{i}"] for i in range(len(s))],
                          [arrays[f"{kind}{n}.b{i}"] for i in range(len(s))])
                for n, s in enumerate(specs)]

    return DmccaModel(nets("enc", enc_specs), nets("dec", dec_specs), enc_specs, dec_specs,
                      [int(d) for d in header["view_dims"]], int(header["shared_dim"]),
                      float(header["mse_weight"]), int(header["seed"]))
