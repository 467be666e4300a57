"""Local window attention: spatial tiling plus per-window multi-head
self-attention with a relative positional bias.

Patches are tiled into non-overlapping S x S windows by integer division of
their grid coordinates. Attention runs over the real members of each window
only (variable-size windows, no padding). The bias is a per-head
(2S-1) x (2S-1) table indexed by the relative (row, col) displacement of the
query patch minus the key patch, added to Q K^T before the sqrt(d) scaling.
"""

from dataclasses import dataclass

import numpy as np

from .data import SlideRecord

__all__ = [
    "AttentionHeadParams",
    "LwaParams",
    "WindowGroup",
    "WindowPartition",
    "partition_windows",
    "attend_window",
    "attention_weights",
    "lwa_forward",
]


@dataclass(eq=False)
class AttentionHeadParams:
    """Per-head d x d projections and the relative positional bias table."""

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    bias_table: np.ndarray

    def __post_init__(self):
        self.W_Q = np.asarray(self.W_Q, dtype=np.float64)
        self.W_K = np.asarray(self.W_K, dtype=np.float64)
        self.W_V = np.asarray(self.W_V, dtype=np.float64)
        self.bias_table = np.asarray(self.bias_table, dtype=np.float64)
        d = self.W_Q.shape[0]
        for name, w in (("W_Q", self.W_Q), ("W_K", self.W_K), ("W_V", self.W_V)):
            if w.shape != (d, d):
                raise ValueError(f"{name} must be square of shape ({d}, {d})")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"{name} contains non-finite values")
        side = self.bias_table.shape[0]
        if self.bias_table.shape != (side, side) or side % 2 == 0:
            raise ValueError("bias_table must be square with odd side 2S-1")
        if not np.all(np.isfinite(self.bias_table)):
            raise ValueError("bias_table contains non-finite values")

    @property
    def dim(self) -> int:
        return self.W_Q.shape[0]

    @property
    def window_size(self) -> int:
        return (self.bias_table.shape[0] + 1) // 2


@dataclass(eq=False)
class LwaParams:
    """All attention heads of the refinement stage."""

    heads: list[AttentionHeadParams]
    dim: int

    def __post_init__(self):
        if not self.heads:
            raise ValueError("at least one attention head required")
        for h in self.heads:
            if h.dim != self.dim:
                raise ValueError("all heads must share the feature dimension")
            if h.window_size != self.heads[0].window_size:
                raise ValueError("all heads must share the window size")

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def window_size(self) -> int:
        return self.heads[0].window_size


@dataclass(eq=False)
class WindowGroup:
    tile_index: tuple[int, int]
    member_indices: list[int]
    local_offsets: list[tuple[int, int]]


@dataclass(eq=False)
class WindowPartition:
    """Disjoint cover of a slide's patches by S x S tiles, row-major order."""

    window_size: int
    windows: list[WindowGroup]


def partition_coords(coords: np.ndarray, window_size: int):
    """Group patch indices by tile (row // S, col // S); empty tiles omitted.

    Returns [(tile, member_index_array, offsets_array)] sorted row-major by
    tile; members keep their original relative order.
    """
    if window_size < 1:
        raise ValueError("window size must be >= 1")
    groups: dict[tuple[int, int], list[int]] = {}
    for i, (r, c) in enumerate(np.asarray(coords)):
        groups.setdefault((int(r) // window_size, int(c) // window_size), []).append(i)
    out = []
    for tile in sorted(groups):
        idx = np.array(groups[tile], dtype=np.int64)
        offs = np.asarray(coords)[idx] % window_size
        out.append((tile, idx, offs))
    return out


def partition_windows(slide: SlideRecord, window_size: int) -> WindowPartition:
    """Tile a slide's patches into S x S windows."""
    parts = partition_coords(slide.coords(), window_size)
    windows = [
        WindowGroup(tile, [int(i) for i in idx], [(int(r), int(c)) for r, c in offs])
        for tile, idx, offs in parts
    ]
    return WindowPartition(window_size, windows)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _bias_matrix(offsets: np.ndarray, table: np.ndarray) -> np.ndarray:
    s = (table.shape[0] + 1) // 2
    d_row = offsets[:, 0][:, None] - offsets[:, 0][None, :]
    d_col = offsets[:, 1][:, None] - offsets[:, 1][None, :]
    return table[d_row + s - 1, d_col + s - 1]


def _check_window_args(features, offsets, head):
    features = np.asarray(features, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("window features must be a non-empty (k, d) matrix")
    if features.shape[1] != head.dim:
        raise ValueError(
            f"feature width {features.shape[1]} does not match head dim {head.dim}"
        )
    s = head.window_size
    k = features.shape[0]
    if k > s * s:
        raise ValueError(f"window holds {k} patches but capacity is S^2 = {s * s}")
    if offsets.shape != (k, 2):
        raise ValueError("offsets must be a (k, 2) array")
    if offsets.min() < 0 or offsets.max() >= s:
        raise ValueError("local offsets must lie in [0, S)")
    return features, offsets


def attention_weights(features, offsets, head: AttentionHeadParams) -> np.ndarray:
    """The (k, k) attention matrix for one window; rows sum to 1."""
    f, offs = _check_window_args(features, offsets, head)
    q = f @ head.W_Q
    k = f @ head.W_K
    z = (q @ k.T + _bias_matrix(offs, head.bias_table)) / np.sqrt(head.dim)
    return _softmax_rows(z)


def attend_window(features, offsets, head: AttentionHeadParams) -> np.ndarray:
    """Self-attention over one window's real members; returns the (k, d) output."""
    f, offs = _check_window_args(features, offsets, head)
    a = attention_weights(f, offs, head)
    return a @ (f @ head.W_V)


def lwa_forward(
    features: np.ndarray, partition: WindowPartition, params: LwaParams
) -> list[np.ndarray]:
    """Run every head over every window; returns L arrays of shape (M, d).

    Patches in different windows never influence each other; per-head outputs
    are produced in fixed head order for bit determinism.
    """
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[0]
    covered = sorted(i for w in partition.windows for i in w.member_indices)
    if covered != list(range(m)):
        raise ValueError("partition does not cover exactly the slide's patches")
    outputs = []
    for head in params.heads:
        out = np.empty_like(features)
        for w in partition.windows:
            idx = np.array(w.member_indices, dtype=np.int64)
            offs = np.array(w.local_offsets, dtype=np.int64)
            out[idx] = attend_window(features[idx], offs, head)
        outputs.append(out)
    return outputs
