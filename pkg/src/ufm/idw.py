"""Four-region sample splitting and inverse-density weighted estimation.

The inverse conditional density of an observation at its fitted quantile
equals the derivative of the loading path times the factor, so it can be
estimated by numerically differentiating cross-fitted loadings: a five
point stencil over quantile levels shifted by h_d. Splitting the panel
into Top/Bottom/Left/Right halves makes the loadings and factors used to
weight each quadrant independent of that quadrant's own observations.
The second stage reruns the alternating fit on the full panel with each
(level, row, column) term weighted by the estimated inverse density.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BandwidthBandWarning,
    ClippedFractionWarning,
    SubsampleRankDeficientError,
)
from .panel import EstimatorConfig, FactorEstimate, PanelMatrix, QuantileGrid
from .sqr import solve_sqr_batch
from .kernels import gaussian_kernel
from .ufa import ufa_fit

_CLIP_LO_FACTOR = 0.05
_CLIP_HI_FACTOR = 20.0

# (w-table, v-factors) used to weight quadrant (a, b); the table and the
# factors never touch the quadrant's own observations.
_CASE_TABLE = {
    (1, 1): ("br", "bottom"),
    (1, 2): ("bl", "bottom"),
    (2, 1): ("tr", "top"),
    (2, 2): ("tl", "top"),
}


@dataclass(frozen=True)
class SplitIndex:
    """Row and column halves (0-based indices, floor split)."""

    n1: np.ndarray
    n2: np.ndarray
    t1: np.ndarray
    t2: np.ndarray

    def rows(self, a: int) -> np.ndarray:
        return self.n1 if a == 1 else self.n2

    def cols(self, b: int) -> np.ndarray:
        return self.t1 if b == 1 else self.t2


@dataclass(frozen=True)
class WeightTensor:
    """Estimated inverse densities per (level, row, column), clipped."""

    w: np.ndarray
    clip_lo: float
    clip_hi: float
    clipped_fraction: float = 0.0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if not ((w >= self.clip_lo - 1e-12).all() and (w <= self.clip_hi + 1e-12).all()):
            raise ValueError("weights violate the clipping bounds")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def ones(cls, m: int, n: int, t: int) -> "WeightTensor":
        return cls(np.ones((m, n, t)), clip_lo=1.0, clip_hi=1.0)


@dataclass(frozen=True)
class CrossFitSet:
    """Half-panel factors and the four cross-fitted loading tables.

    Each table holds loadings for every row at every stencil level
    (``stencil_levels`` ascending); the name encodes (factor half, column
    half), e.g. ``tl`` = factors from Top, data columns from Left.
    """

    f_top: np.ndarray
    f_bottom: np.ndarray
    lam_tl: np.ndarray
    lam_tr: np.ndarray
    lam_bl: np.ndarray
    lam_br: np.ndarray
    stencil_levels: np.ndarray

    def table(self, name: str) -> np.ndarray:
        return getattr(self, f"lam_{name}")

    def factors(self, which: str) -> np.ndarray:
        return self.f_top if which == "top" else self.f_bottom


def split_panel(panel: PanelMatrix) -> SplitIndex:
    """Floor halves along both axes; every quadrant must be nonempty."""
    n, t = panel.n_rows, panel.n_cols
    if n < 4 or t < 4:
        raise ValueError("sample splitting needs N >= 4 and T >= 4")
    return SplitIndex(
        n1=np.arange(n // 2),
        n2=np.arange(n // 2, n),
        t1=np.arange(t // 2),
        t2=np.arange(t // 2, t),
    )


def fpdf_derivative(values: np.ndarray, h_d: float, mode: str = "central") -> np.ndarray:
    """Five-point difference along the leading axis of ``values``.

    Stencil ordering matches ``QuantileGrid.stencil_levels``:
    central  -> values at tau + h_d * [-2, -1, +1, +2]
    forward  -> values at tau + h_d * [0, 1, 2, 3, 4]
    backward -> values at tau + h_d * [0, -1, -2, -3, -4]
    All three are exact on polynomials up to degree 4 with O(h_d^4) error.
    """
    values = np.asarray(values, dtype=float)
    if mode == "central":
        coeffs = np.array([1.0, -8.0, 8.0, -1.0])
    elif mode == "forward":
        coeffs = np.array([-25.0, 48.0, -36.0, 16.0, -3.0])
    elif mode == "backward":
        coeffs = np.array([25.0, -48.0, 36.0, -16.0, 3.0])
    else:
        raise ValueError(f"unknown stencil mode {mode!r}")
    if values.shape[0] != coeffs.size:
        raise ValueError(f"{mode} stencil needs {coeffs.size} values, got {values.shape[0]}")
    # coefficients sum to zero, so centering is exact and kills the common
    # level before the contraction (constants differentiate to exactly 0)
    return np.tensordot(coeffs, values - values[:1], axes=(0, 0)) / (12.0 * h_d)


def _sub_panel(panel: PanelMatrix, rows: np.ndarray, cols: np.ndarray) -> PanelMatrix:
    values = panel.submatrix(rows, cols)
    return PanelMatrix(values, tuple(panel.row_ids[i] for i in rows),
                       tuple(panel.col_ids[j] for j in cols))


def _half_factors(panel: PanelMatrix, grid: QuantileGrid, config: EstimatorConfig,
                  rows: np.ndarray) -> np.ndarray:
    """Full-length factors estimated from one horizontal half of the panel."""
    half = _sub_panel(panel, rows, np.arange(panel.n_cols))
    est = ufa_fit(half, grid, config)
    eigs = est.eigenvalues
    if eigs[-1] <= 0 or eigs[-1] < 1e-10 * max(eigs[0], 1e-300):
        raise SubsampleRankDeficientError(
            "half-panel factor Gram is numerically rank deficient")
    return est.factors


def _loading_table(panel: PanelMatrix, grid: QuantileGrid, config: EstimatorConfig,
                   factors: np.ndarray, cols: np.ndarray, rows: np.ndarray,
                   levels: np.ndarray) -> np.ndarray:
    """Per-row smoothed QR of Y[rows, cols] on factors[cols] at each level."""
    config = config.resolved_for(panel)
    y = panel.submatrix(rows, cols)
    f_sub = factors[cols]
    n_rows = y.shape[0]
    s_count = levels.size
    # row-wise least squares as a cheap, level-independent start
    gram = f_sub.T @ f_sub
    lam0 = np.linalg.solve(gram, f_sub.T @ y.T).T
    init = np.tile(lam0, (s_count, 1))
    kernel = gaussian_kernel(config.kernel_order)
    res = solve_sqr_batch(
        np.tile(y, (s_count, 1)), f_sub, np.repeat(levels, n_rows)[:, None],
        np.asarray(1.0), kernel, config.bandwidth_h,
        (-config.box_bound, config.box_bound), init,
        config.inner_tol, config.max_inner_iters)
    return res.theta.reshape(s_count, n_rows, -1)


def crossfit_estimates(panel: PanelMatrix, grid: QuantileGrid,
                       config: EstimatorConfig, split: SplitIndex) -> CrossFitSet:
    """Half-panel factors plus all four loading tables at stencil levels."""
    levels = grid.all_stencil_levels()
    all_rows = np.arange(panel.n_rows)
    f_top = _half_factors(panel, grid, config, split.n1)
    f_bottom = _half_factors(panel, grid, config, split.n2)
    tables = {}
    for name, (f_half, cols) in {
        "tl": (f_top, split.t1), "tr": (f_top, split.t2),
        "bl": (f_bottom, split.t1), "br": (f_bottom, split.t2),
    }.items():
        tables[name] = _loading_table(panel, grid, config, f_half, cols,
                                      all_rows, levels)
    return CrossFitSet(f_top=f_top, f_bottom=f_bottom,
                       lam_tl=tables["tl"], lam_tr=tables["tr"],
                       lam_bl=tables["bl"], lam_br=tables["br"],
                       stencil_levels=levels)


def _stencil_indices(grid: QuantileGrid, all_levels: np.ndarray, m: int) -> np.ndarray:
    idx = np.searchsorted(all_levels, grid.stencil_levels(m))
    # backward stencils enumerate descending levels; searchsorted needs exact hits
    check = all_levels[idx]
    if not np.allclose(check, grid.stencil_levels(m), atol=1e-12):
        raise ValueError("stencil levels missing from the cross-fit table")
    return idx


def raw_inverse_density(crossfit: CrossFitSet, grid: QuantileGrid,
                        split: SplitIndex) -> np.ndarray:
    """Unclipped weight tensor assembled quadrant by quadrant."""
    n = split.n1.size + split.n2.size
    t = split.t1.size + split.t2.size
    m_count = grid.m_count
    raw = np.empty((m_count, n, t))
    for (a, b), (w_name, v_name) in _CASE_TABLE.items():
        rows, cols = split.rows(a), split.cols(b)
        table = crossfit.table(w_name)
        f_v = crossfit.factors(v_name)[cols]
        for m in range(m_count):
            idx = _stencil_indices(grid, crossfit.stencil_levels, m)
            deriv = fpdf_derivative(table[idx][:, rows, :], grid.shift, grid.modes[m])
            raw[np.ix_([m], rows, cols)] = (deriv @ f_v.T)[None]
    return raw


def clip_weights(raw: np.ndarray, scale_hint: float | None = None) -> WeightTensor:
    """Clip raw inverse densities to a band around their median.

    True inverse densities are bounded away from zero and infinity, so
    values outside [0.05, 20] times the median are treated as stencil
    noise. When the whole tensor is negligible against ``scale_hint`` (the
    fitted common-component scale), the loading paths are flat in the
    quantile level - a numerically deterministic panel - and the band is
    re-anchored to the hint so every weight lands on the floor.
    """
    med = float(np.median(raw))
    if not np.isfinite(med) or med <= 0.0:
        med = scale_hint if scale_hint else 1.0
    elif scale_hint and med < 1e-3 * scale_hint:
        med = scale_hint
    lo, hi = _CLIP_LO_FACTOR * med, _CLIP_HI_FACTOR * med
    clipped = np.clip(raw, lo, hi)
    frac = float(np.mean((raw < lo) | (raw > hi)))
    if frac > 0.10:
        warnings.warn(f"{frac:.1%} of inverse-density weights were clipped",
                      ClippedFractionWarning, stacklevel=2)
    return WeightTensor(w=clipped, clip_lo=lo, clip_hi=hi, clipped_fraction=frac)


def inverse_density_weights(crossfit: CrossFitSet, grid: QuantileGrid,
                            split: SplitIndex) -> WeightTensor:
    mid = crossfit.stencil_levels.size // 2
    surface = crossfit.lam_tl[mid] @ crossfit.f_top.T
    scale = float(np.median(np.abs(surface)))
    return clip_weights(raw_inverse_density(crossfit, grid, split), scale)


def quadrant_weight_inputs(panel: PanelMatrix, grid: QuantileGrid,
                           config: EstimatorConfig, split: SplitIndex,
                           a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """The (loading table rows, factors) feeding quadrant (a, b)'s weights.

    Recomputes exactly the pieces the full pipeline uses for that quadrant,
    reading the panel only through ``panel.submatrix``; a tracing panel can
    therefore certify that quadrant (a, b)'s own cells are never touched.
    """
    w_name, v_name = _CASE_TABLE[(a, b)]
    f_rows = split.n1 if v_name == "top" else split.n2
    f_half = _half_factors(panel, grid, config, f_rows)
    table_cols = split.t1 if w_name.endswith("l") else split.t2
    table = _loading_table(panel, grid, config, f_half, table_cols,
                           split.rows(a), grid.all_stencil_levels())
    return table, f_half


def idw_ufa_fit(
    panel: PanelMatrix,
    grid: QuantileGrid,
    config: EstimatorConfig,
    init: FactorEstimate | None = None,
) -> tuple[FactorEstimate, WeightTensor]:
    """Two-stage fit: cross-fit inverse densities, then a weighted refit.

    ``init`` seeds the weighted full-panel stage; by default the plain
    unweighted fit of the full panel is computed and used, mirroring the
    recommended warm-start chain.
    """
    config = config.resolved_for(panel)
    zeta = 1.0 / np.sqrt(panel.n_rows) + 1.0 / np.sqrt(panel.n_cols)
    h = config.bandwidth_h
    if not (zeta / h**5 < grid.shift < h):
        warnings.warn(
            f"(h_d={grid.shift:.3g}, h={h:.3g}) falls outside the asymptotic "
            f"band ({zeta / h**5:.3g}, {h:.3g}); finite-sample results may "
            "still be fine", BandwidthBandWarning, stacklevel=2)
    split = split_panel(panel)
    crossfit = crossfit_estimates(panel, grid, config, split)
    weights = inverse_density_weights(crossfit, grid, split)
    if init is None:
        init = ufa_fit(panel, grid, config)
    est = ufa_fit(panel, grid, config, init=init, weights=weights.w)
    return est, weights
