"""Scoring: two-view CCA, the filterbank + PCA + CCA chain, and match/mismatch d'."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DEFAULT_WIDTHS, PcaBasis, ViewLike, as_view, boxcar_filterbank, pca_fit_project
from .errors import DegenerateInputError, InvalidConfigError, NumericalError, ShapeError

DEFAULT_DURATIONS = (1, 2, 4, 8, 16, 32)
MAX_DPRIME = 1e3
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class CcaSolution:
    proj_a: np.ndarray
    proj_b: np.ndarray
    canonical_correlations: np.ndarray
    regularization: tuple
    mean_a: np.ndarray
    mean_b: np.ndarray

    def transform(self, a: ViewLike, b: ViewLike) -> tuple[np.ndarray, np.ndarray]:
        a, b = as_view(a).data, as_view(b).data
        if a.shape[1] != self.proj_a.shape[0] or b.shape[1] != self.proj_b.shape[0]:
            raise ShapeError(f"CCA expects {self.proj_a.shape[0]} and {self.proj_b.shape[0]} "
                             f"channels, got {a.shape[1]} and {b.shape[1]}")
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"inputs disagree in length: {a.shape[0]} vs {b.shape[0]}")
        return (a - self.mean_a) @ self.proj_a, (b - self.mean_b) @ self.proj_b


def _inv_sqrt(C: np.ndarray, what: str) -> np.ndarray:
    evals, evecs = np.linalg.eigh(0.5 * (C + C.T))
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300) or evals[-1] <= 0:
        raise NumericalError(f"{what} covariance is singular after regularization "
                             f"(eigenvalues {evals[0]:.3g}..{evals[-1]:.3g})")
    return (evecs / np.sqrt(evals)) @ evecs.T


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx <= 0 or syy <= 0:
        raise DegenerateInputError("correlation of a zero-variance series is undefined")
    return float(np.dot(xc, yc) / np.sqrt(sxx * syy))


def fit_cca(a: ViewLike, b: ViewLike, k: int = 1, reg: float | None = None) -> CcaSolution:
    """Regularized two-view CCA.

    ``reg=None`` adds ``1e-4 * mean(diag(C))`` to each covariance.  The
    reported canonical correlations are the Pearson correlations of the
    projected training pairs, which equal the singular values when
    ``reg == 0``.
    """
    A, B = as_view(a).data, as_view(b).data
    if A.shape[0] != B.shape[0]:
        raise ShapeError(f"inputs disagree in length: {A.shape[0]} vs {B.shape[0]}")
    if not 1 <= k <= min(A.shape[1], B.shape[1]):
        raise InvalidConfigError(f"k must lie in [1, {min(A.shape[1], B.shape[1])}], got {k}")
    T = A.shape[0]
    mean_a, mean_b = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - mean_a, B - mean_b
    Caa = Ac.T @ Ac / (T - 1)
    Cbb = Bc.T @ Bc / (T - 1)
    Cab = Ac.T @ Bc / (T - 1)
    if reg is None:
        reg_a = 1e-4 * np.mean(np.diag(Caa))
        reg_b = 1e-4 * np.mean(np.diag(Cbb))
    else:
        if reg < 0:
            raise InvalidConfigError(f"reg must be non-negative, got {reg}")
        reg_a = reg_b = float(reg)
    Wa = _inv_sqrt(Caa + reg_a * np.eye(len(Caa)), "first view")
    Wb = _inv_sqrt(Cbb + reg_b * np.eye(len(Cbb)), "second view")
    U, _, Vt = np.linalg.svd(Wa @ Cab @ Wb)
    proj_a = Wa @ U[:, :k]
    proj_b = Wb @ Vt.T[:, :k]

    pa, pb = Ac @ proj_a, Bc @ proj_b
    corrs = np.empty(k)
    for i in range(k):
        sa, sb = np.dot(pa[:, i], pa[:, i]), np.dot(pb[:, i], pb[:, i])
        corrs[i] = np.dot(pa[:, i], pb[:, i]) / np.sqrt(sa * sb) if sa > 0 and sb > 0 else 0.0
    order = np.argsort(-corrs, kind="stable")
    return CcaSolution(proj_a[:, order], proj_b[:, order], corrs[order],
                       (float(reg_a), float(reg_b)), mean_a, mean_b)


def score_first_cc(a: ViewLike, b: ViewLike, sol: CcaSolution) -> float:
    pa, pb = sol.transform(a, b)
    return pearson(pa[:, 0], pb[:, 0])


@dataclass(frozen=True)
class Cca3Config:
    """Sizes of the filterbank/PCA pre-chain.

    ``response_dim=None`` keeps every filterbank output of the response.
    """

    response_widths: tuple = DEFAULT_WIDTHS
    stimulus_widths: tuple = DEFAULT_WIDTHS
    response_dim: int | None = None
    stimulus_dim: int = 1
    reg: float | None = None
    test_fraction: float = 0.25


@dataclass
class Cca3Chain:
    cfg: Cca3Config = field(default_factory=Cca3Config)
    response_pca: PcaBasis | None = None
    stimulus_pca: PcaBasis | None = None
    cca: CcaSolution | None = None

    def _response_features(self, response, fit: bool):
        banked = boxcar_filterbank(response, self.cfg.response_widths)
        if fit:
            dim = self.cfg.response_dim or banked.n_channels
            if dim > banked.n_channels:
                raise InvalidConfigError(f"response_dim={dim} exceeds the {banked.n_channels} "
                                         "filterbank channels")
            projected, self.response_pca = pca_fit_project(banked, dim)
            return projected.data
        return self.response_pca.project(banked).data

    def _stimulus_features(self, stimulus, fit: bool):
        stim = as_view(stimulus)
        if fit:
            reduced, self.stimulus_pca = pca_fit_project(stim, min(self.cfg.stimulus_dim, stim.n_channels))
        else:
            reduced = self.stimulus_pca.project(stim)
        return boxcar_filterbank(reduced, self.cfg.stimulus_widths).data

    def fit(self, response: ViewLike, stimulus: ViewLike) -> "Cca3Chain":
        ra = self._response_features(response, fit=True)
        sb = self._stimulus_features(stimulus, fit=True)
        self.cca = fit_cca(ra, sb, k=1, reg=self.cfg.reg)
        return self

    def transform(self, response: ViewLike, stimulus: ViewLike) -> tuple[np.ndarray, np.ndarray]:
        """First canonical pair of new data, as two 1-D series."""
        if self.cca is None:
            raise InvalidConfigError("chain must be fitted before transform")
        ra = self._response_features(response, fit=False)
        sb = self._stimulus_features(stimulus, fit=False)
        pa, pb = self.cca.transform(ra, sb)
        return pa[:, 0], pb[:, 0]

    def score(self, response: ViewLike, stimulus: ViewLike) -> float:
        return pearson(*self.transform(response, stimulus))


def cca3_chain(response: ViewLike, stimulus: ViewLike, cfg: Cca3Config | None = None,
               heldout: tuple | None = None) -> float:
    """Held-out first canonical correlation after the filterbank/PCA pre-chain.

    The chain is fitted on ``(response, stimulus)`` and scored on ``heldout``.
    Without ``heldout`` the last ``cfg.test_fraction`` of the samples is held
    out.
    """
    cfg = cfg or Cca3Config()
    response, stimulus = as_view(response), as_view(stimulus)
    if response.n_samples != stimulus.n_samples:
        raise ShapeError(f"response has {response.n_samples} samples, stimulus {stimulus.n_samples}")
    if heldout is None:
        if not 0 < cfg.test_fraction < 1:
            raise InvalidConfigError(f"test_fraction must lie in (0, 1), got {cfg.test_fraction}")
        cut = int(round(response.n_samples * (1 - cfg.test_fraction)))
        heldout = (response.data[cut:], stimulus.data[cut:])
        response, stimulus = response.data[:cut], stimulus.data[:cut]
    chain = Cca3Chain(cfg).fit(response, stimulus)
    return chain.score(*heldout)


def cohen_dprime(match: Sequence[float], mismatch: Sequence[float],
                 var_floor: float = VAR_FLOOR, max_dprime: float = MAX_DPRIME) -> float:
    """Pooled-variance separation of two populations, clipped to ``max_dprime``."""
    match = np.asarray(match, dtype=np.float64)
    mismatch = np.asarray(mismatch, dtype=np.float64)
    if match.size < 1 or mismatch.size < 1:
        raise InvalidConfigError("both populations need at least one value")
    var_m = match.var(ddof=1) if match.size > 1 else 0.0
    var_x = mismatch.var(ddof=1) if mismatch.size > 1 else 0.0
    pooled = max((var_m + var_x) / 2.0, var_floor)
    d = (match.mean() - mismatch.mean()) / np.sqrt(pooled)
    return float(np.clip(d, -max_dprime, max_dprime))


def segment_correlations(a, b, segment_samples: int) -> np.ndarray:
    """Matrix ``C[t, s]`` = correlation of segment ``t`` of ``a`` with segment ``s`` of ``b``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"series differ in length: {a.size} vs {b.size}")
    if segment_samples < 2:
        raise InvalidConfigError(f"segments need at least 2 samples, got {segment_samples}")
    n_seg = a.size // segment_samples
    if n_seg < 2:
        raise InvalidConfigError(f"{a.size} samples give fewer than 2 segments of {segment_samples}")
    A = a[:n_seg * segment_samples].reshape(n_seg, segment_samples)
    B = b[:n_seg * segment_samples].reshape(n_seg, segment_samples)
    A = A - A.mean(axis=1, keepdims=True)
    B = B - B.mean(axis=1, keepdims=True)
    na, nb = np.sqrt(np.sum(A * A, axis=1)), np.sqrt(np.sum(B * B, axis=1))
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("a segment has zero variance")
    return (A / na[:, None]) @ (B / nb[:, None]).T


def dprime_match_mismatch(a_1d, b_1d, segment_samples: int, var_floor: float = VAR_FLOOR,
                          max_dprime: float = MAX_DPRIME) -> float:
    """d' between matched segment pairs and all ordered mismatched pairs."""
    C = segment_correlations(a_1d, b_1d, segment_samples)
    off = ~np.eye(len(C), dtype=bool)
    return cohen_dprime(np.diag(C), C[off], var_floor, max_dprime)


@dataclass(frozen=True)
class DPrimeTable:
    rows: tuple
    sample_rate_hz: float

    def __post_init__(self):
        secs = [r[0] for r in self.rows]
        if any(b <= a for a, b in zip(secs, secs[1:])):
            raise InvalidConfigError(f"segment durations must increase strictly, got {secs}")

    @property
    def durations(self) -> list[float]:
        return [r[0] for r in self.rows]

    @property
    def values(self) -> list[float]:
        return [r[1] for r in self.rows]


def segment_lengths(durations_seconds: Sequence[float], rate: float) -> list[int]:
    out = []
    for sec in durations_seconds:
        n = int(round(sec * rate))
        if n < 2:
            raise InvalidConfigError(f"duration {sec}s at {rate} Hz gives {n} samples; need >= 2")
        out.append(n)
    return out


def dprime_sweep(a, b, durations_seconds: Sequence[float], rate: float) -> DPrimeTable:
    lengths = segment_lengths(durations_seconds, rate)
    rows = tuple((float(sec), dprime_match_mismatch(a, b, n))
                 for sec, n in zip(durations_seconds, lengths))
    return DPrimeTable(rows, float(rate))
