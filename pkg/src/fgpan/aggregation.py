"""Coordinate-aware slide-level aggregation: softmax importance weights over
concatenated [feature, positional-embedding] vectors, then a weighted sum of
patch distributions."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AggregationParams",
    "SlidePrediction",
    "positional_embedding",
    "sinusoidal_embeddings",
    "table_embeddings",
    "patch_weights",
    "aggregate_slide",
    "slide_loss",
]

POSITIONAL_MODES = ("sinusoidal", "learned_table")


@dataclass(eq=False)
class AggregationParams:
    """Projection vector w (length 2d) plus the positional embedding choice.

    learned_table, shaped (grid_rows * grid_cols, d) and indexed by
    row * grid_cols + col, is present exactly when the mode is learned_table.
    """

    w: np.ndarray
    positional_mode: str = "sinusoidal"
    learned_table: np.ndarray | None = None
    grid_rows: int | None = None
    grid_cols: int | None = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or self.w.shape[0] % 2 != 0:
            raise ValueError("w must be a vector of even length 2d")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("w contains non-finite values")
        if self.positional_mode not in POSITIONAL_MODES:
            raise ValueError(f"positional_mode must be one of {POSITIONAL_MODES}")
        if self.positional_mode == "learned_table":
            if self.learned_table is None or self.grid_rows is None or self.grid_cols is None:
                raise ValueError("learned_table mode requires a table and grid dims")
            self.learned_table = np.asarray(self.learned_table, dtype=np.float64)
            d = self.w.shape[0] // 2
            expected = (self.grid_rows * self.grid_cols, d)
            if self.learned_table.shape != expected:
                raise ValueError(f"learned_table must have shape {expected}")
        elif self.learned_table is not None:
            raise ValueError("learned_table must be absent in sinusoidal mode")

    @property
    def dim(self) -> int:
        return self.w.shape[0] // 2


@dataclass(eq=False)
class SlidePrediction:
    """Patch importance weights plus the aggregated class distribution."""

    alpha: np.ndarray
    P: np.ndarray
    predicted: int

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.P = np.asarray(self.P, dtype=np.float64)
        if np.any(self.alpha < 0) or abs(self.alpha.sum() - 1.0) > 1e-9:
            raise ValueError("alpha must be a probability vector")
        if abs(self.P.sum() - 1.0) > 1e-9:
            raise ValueError("P must sum to 1")


def positional_embedding(coord, d: int) -> np.ndarray:
    """Sinusoidal encoding of one (row, col) grid coordinate.

    For j in 0..d/4-1 with omega_j = 10000**(-4j/d), slots (4j..4j+3) hold
    (sin(row * omega_j), cos(row * omega_j), sin(col * omega_j),
    cos(col * omega_j)). Requires d divisible by 4.
    """
    return sinusoidal_embeddings(np.asarray([coord]), d)[0]


def sinusoidal_embeddings(coords: np.ndarray, d: int) -> np.ndarray:
    """Vectorized sinusoidal encoding of (M, 2) grid coordinates."""
    if d % 4 != 0:
        raise ValueError("sinusoidal positional encoding requires d divisible by 4")
    coords = np.asarray(coords, dtype=np.float64)
    j = np.arange(d // 4)
    omega = 10000.0 ** (-4.0 * j / d)
    rows = coords[:, 0][:, None] * omega[None, :]
    cols = coords[:, 1][:, None] * omega[None, :]
    out = np.empty((coords.shape[0], d))
    out[:, 0::4] = np.sin(rows)
    out[:, 1::4] = np.cos(rows)
    out[:, 2::4] = np.sin(cols)
    out[:, 3::4] = np.cos(cols)
    return out


def table_embeddings(coords: np.ndarray, params: AggregationParams) -> np.ndarray:
    """Rows of the learned table at row * grid_cols + col."""
    coords = np.asarray(coords)
    if coords[:, 0].max() >= params.grid_rows or coords[:, 1].max() >= params.grid_cols:
        raise ValueError("coordinate outside the learned positional table's grid")
    flat = coords[:, 0] * params.grid_cols + coords[:, 1]
    return params.learned_table[flat]


def _positional(coords: np.ndarray, params: AggregationParams) -> np.ndarray:
    if params.positional_mode == "sinusoidal":
        return sinusoidal_embeddings(coords, params.dim)
    return table_embeddings(coords, params)


def patch_weights(
    h_list: np.ndarray, coords: np.ndarray, params: AggregationParams
) -> np.ndarray:
    """Softmax importance weights over w . [H_i || phi(coord_i)]."""
    h = np.asarray(h_list, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("expected a non-empty (M, d) feature matrix")
    if h.shape[1] * 2 != params.w.shape[0]:
        raise ValueError(
            f"w has length {params.w.shape[0]}, expected 2d = {2 * h.shape[1]}"
        )
    phi = _positional(coords, params)
    logits = np.concatenate([h, phi], axis=1) @ params.w
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


def aggregate_slide(alpha: np.ndarray, patch_probs: np.ndarray) -> np.ndarray:
    """Slide distribution P = sum_i alpha_i * p_i."""
    alpha = np.asarray(alpha, dtype=np.float64)
    patch_probs = np.asarray(patch_probs, dtype=np.float64)
    if patch_probs.ndim != 2 or alpha.shape != (patch_probs.shape[0],):
        raise ValueError("alpha must have one weight per patch distribution row")
    return alpha @ patch_probs


def slide_loss(p_slide: np.ndarray, y: int) -> float:
    """Cross entropy -ln P_y of the aggregated slide distribution."""
    p_slide = np.asarray(p_slide, dtype=np.float64)
    if not 0 <= y < p_slide.shape[0]:
        raise ValueError(f"label {y} outside [0, {p_slide.shape[0]})")
    return float(-np.log(p_slide[y]))
