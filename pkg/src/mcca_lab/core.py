"""Matrix and statistics substrate.

Everything here is a pure function of its inputs: time-lag embedding,
standardization, blockwise cross-covariance, PCA and a causal boxcar
filterbank.  Covariances use the unbiased 1/(T-1) normalization throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import InvalidConfigError, ShapeError

DEFAULT_WIDTHS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class ViewMatrix:
    """One data view: a (samples x channels) real matrix on a shared time axis."""

    data: np.ndarray
    view_id: int = 0
    sample_rate_hz: float = 64.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ShapeError(f"view data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 1:
            raise ShapeError(f"view needs T >= 2 and at least one channel, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError(f"view {self.view_id} contains non-finite entries")
        if not self.sample_rate_hz > 0:
            raise InvalidConfigError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "data", data)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "ViewMatrix":
        return replace(self, data=data)


ViewLike = Union[ViewMatrix, np.ndarray]


def as_view(x: ViewLike, view_id: int = 0) -> ViewMatrix:
    if isinstance(x, ViewMatrix):
        return x
    return ViewMatrix(np.asarray(x, dtype=np.float64), view_id=view_id)


@dataclass(frozen=True)
class ViewCollection:
    """N views sharing a common number of samples."""

    views: tuple = field(default_factory=tuple)

    def __post_init__(self):
        views = tuple(as_view(v, view_id=i) for i, v in enumerate(self.views))
        if not views:
            raise ShapeError("a view collection needs at least one view")
        lengths = {v.n_samples for v in views}
        if len(lengths) != 1:
            raise ShapeError(f"views disagree on sample count: {sorted(lengths)}")
        object.__setattr__(self, "views", views)

    @classmethod
    def of(cls, views: Sequence[ViewLike]) -> "ViewCollection":
        if isinstance(views, ViewCollection):
            return views
        return cls(tuple(views))

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self) -> Iterator[ViewMatrix]:
        return iter(self.views)

    def __getitem__(self, i) -> ViewMatrix:
        return self.views[i]

    @property
    def n_samples(self) -> int:
        return self.views[0].n_samples

    @property
    def dims(self) -> list[int]:
        return [v.n_channels for v in self.views]

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def arrays(self) -> list[np.ndarray]:
        return [v.data for v in self.views]

    def rows(self, index) -> "ViewCollection":
        """Select the same sample rows from every view."""
        return ViewCollection(tuple(v.with_data(v.data[index]) for v in self.views))


@dataclass(frozen=True)
class LagConfig:
    num_lags: int
    padding: str = "zero-pad"

    def __post_init__(self):
        if int(self.num_lags) != self.num_lags or self.num_lags < 1:
            raise InvalidConfigError(f"num_lags must be a positive integer, got {self.num_lags}")
        if self.padding not in ("zero-pad", "truncate"):
            raise InvalidConfigError(f"padding must be 'zero-pad' or 'truncate', got {self.padding!r}")


@dataclass(frozen=True)
class CovarianceBlocks:
    blocks: list
    sample_count: int

    @property
    def n_views(self) -> int:
        return len(self.blocks)

    @property
    def dims(self) -> list[int]:
        return [self.blocks[i][i].shape[0] for i in range(self.n_views)]

    def __getitem__(self, ij) -> np.ndarray:
        i, j = ij
        return self.blocks[i][j]


def lag_embed(view: ViewLike, cfg: LagConfig | int) -> ViewMatrix:
    """Stack delayed copies of every channel.

    Column block ``k`` holds the input delayed by ``k`` samples, so output
    column ``k * d + c`` is channel ``c`` at lag ``k``.
    """
    view = as_view(view)
    if not isinstance(cfg, LagConfig):
        cfg = LagConfig(int(cfg))
    x = view.data
    T, d = x.shape
    L = cfg.num_lags
    if L > T:
        raise InvalidConfigError(f"num_lags={L} exceeds the number of samples T={T}")
    out = np.zeros((T, d * L))
    for k in range(L):
        out[k:, k * d:(k + 1) * d] = x[:T - k]
    if cfg.padding == "truncate":
        out = out[L - 1:]
    return view.with_data(out)


def standardize(view: ViewLike) -> ViewMatrix:
    """Zero-mean, unit-variance (ddof=1) channels; constant channels become zero."""
    view = as_view(view)
    x = view.data
    centered = x - x.mean(axis=0)
    sd = np.sqrt(np.sum(centered**2, axis=0) / (x.shape[0] - 1))
    # tiny relative spread is numerical residue of a constant channel
    scale = np.maximum(np.abs(x).max(axis=0), 1.0)
    flat = sd <= 1e-13 * scale
    out = np.zeros_like(centered)
    out[:, ~flat] = centered[:, ~flat] / sd[~flat]
    return view.with_data(out)


def cross_covariance(views) -> CovarianceBlocks:
    views = ViewCollection.of(views)
    T = views.n_samples
    centered = [x - x.mean(axis=0) for x in views.arrays()]
    stacked = np.hstack(centered)
    full = stacked.T @ stacked / (T - 1)
    edges = np.concatenate([[0], np.cumsum(views.dims)])
    n = len(views)
    blocks = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            blk = full[edges[i]:edges[i + 1], edges[j]:edges[j + 1]].copy()
            blocks[i][j] = blk
            blocks[j][i] = blk.T.copy()
    for i in range(n):
        blocks[i][i] = 0.5 * (blocks[i][i] + blocks[i][i].T)
    return CovarianceBlocks(blocks=blocks, sample_count=T)


@dataclass(frozen=True)
class PcaBasis:
    """Fitted PCA: ``components`` is (d x k) with orthonormal columns."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def project(self, data: ViewLike) -> ViewMatrix:
        view = as_view(data)
        if view.n_channels != self.components.shape[0]:
            raise ShapeError(
                f"PCA basis expects {self.components.shape[0]} channels, got {view.n_channels}")
        return view.with_data((view.data - self.mean) @ self.components)


def pca_fit_project(data: ViewLike, out_dim: int) -> tuple[ViewMatrix, PcaBasis]:
    view = as_view(data)
    d = view.n_channels
    if not 1 <= out_dim <= d:
        raise InvalidConfigError(f"out_dim must lie in [1, {d}], got {out_dim}")
    mean = view.data.mean(axis=0)
    centered = view.data - mean
    cov = centered.T @ centered / (view.n_samples - 1)
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(evals)[::-1][:out_dim]
    evals, evecs = evals[order], evecs[:, order]
    pivot = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivot, np.arange(out_dim)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    basis = PcaBasis(mean=mean, components=evecs, eigenvalues=np.maximum(evals, 0.0))
    return view.with_data(centered @ evecs), basis


def boxcar_filterbank(data: ViewLike, widths: Sequence[int] = DEFAULT_WIDTHS) -> ViewMatrix:
    """Causal moving averages of each channel, one band per width.

    Output column ``b * d + c`` is channel ``c`` smoothed with ``widths[b]``.
    Samples before the start of the record are taken equal to the first
    sample, so a constant input stays constant.
    """
    view = as_view(data)
    x = view.data
    T, d = x.shape
    if len(widths) == 0:
        raise InvalidConfigError("filterbank needs at least one width")
    bands = []
    for w in widths:
        if int(w) != w or w < 1:
            raise InvalidConfigError(f"filter widths must be positive integers, got {w}")
        w = int(w)
        if w > T:
            raise InvalidConfigError(f"filter width {w} exceeds the number of samples T={T}")
        if w == 1:
            bands.append(x.copy())
            continue
        padded = np.vstack([np.repeat(x[:1], w - 1, axis=0), x])
        csum = np.vstack([np.zeros((1, d)), np.cumsum(padded, axis=0)])
        bands.append((csum[w:] - csum[:-w]) / w)
    return view.with_data(np.hstack(bands))
