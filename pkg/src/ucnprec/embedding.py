"""Real embedding of complex quantities and the block-sparse precoder model.

A complex vector u maps to [Re u; Im u]. A complex MISO channel h maps to the
(2 M_t) x 2 block matrix [[Re h, -Im h], [Im h, Re h]], so that mat.T @ p_hat
is the embedding of the scalar h^H p. Both maps preserve Euclidean norms.

Precoders live only on the active (BS, UT) pairs selected by the serving
clusters; inactive pairs are implicitly zero. The canonical stacking order is
BS-major with ascending UT index inside each BS, which every solver and file
format in this package relies on.
"""

from dataclasses import dataclass

import numpy as np

from .channel import ClusterMap, dbm_to_watt


@dataclass
class RealChannel:
    """Real block form of one complex channel vector."""

    mat: np.ndarray  # (2*M_t, 2)

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=float)
        if self.mat.ndim != 2 or self.mat.shape[1] != 2 or self.mat.shape[0] % 2:
            raise ValueError("RealChannel.mat must have shape (2*M_t, 2)")

    def to_complex(self) -> np.ndarray:
        m = self.mat.shape[0] // 2
        return self.mat[:m, 0] + 1j * self.mat[m:, 0]


def embed_channel(h: np.ndarray) -> RealChannel:
    """Embed a complex channel vector as its (2*M_t) x 2 real block matrix."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 1:
        raise ValueError("expected a 1-D complex channel vector")
    re, im = h.real, h.imag
    top = np.column_stack([re, -im])
    bottom = np.column_stack([im, re])
    return RealChannel(mat=np.vstack([top, bottom]))


def embed_precoder(p: np.ndarray) -> np.ndarray:
    """Stack real over imaginary parts of a complex vector."""
    p = np.asarray(p, dtype=complex)
    if p.ndim != 1:
        raise ValueError("expected a 1-D complex vector")
    return np.concatenate([p.real, p.imag])


def extract_precoder(v: np.ndarray) -> np.ndarray:
    """Inverse of embed_precoder."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size % 2:
        raise ValueError("real vector must have even length")
    m = v.size // 2
    return v[:m] + 1j * v[m:]


@dataclass
class PowerBudget:
    """Per-BS transmit power limits in linear watts."""

    rho: np.ndarray  # (B,)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.ndim != 1:
            raise ValueError("rho must be a vector of length B")
        if not np.all(self.rho > 0):
            raise ValueError("all power limits must be > 0")

    @classmethod
    def uniform(cls, n_bs: int, watts: float) -> "PowerBudget":
        return cls(rho=np.full(n_bs, float(watts)))

    @classmethod
    def uniform_dbm(cls, n_bs: int, dbm: float) -> "PowerBudget":
        return cls.uniform(n_bs, dbm_to_watt(dbm))

    @property
    def n_bs(self) -> int:
        return self.rho.size


class BlockLayout:
    """Canonical ordering of the active (BS, UT) blocks of a cluster map.

    The order is a pure function of the ClusterMap: ascending BS index, then
    ascending UT index within each BS, regardless of how the serving lists
    were supplied. Rows of a state array follow this order, so each BS owns a
    contiguous row range.
    """

    def __init__(self, clusters: ClusterMap, M_t: int):
        if M_t < 1:
            raise ValueError("M_t must be >= 1")
        self.M_t = int(M_t)
        self.block_len = 2 * self.M_t
        self.n_bs = clusters.n_bs
        self.n_ut = clusters.n_ut
        self.bs_uts = [np.array(sorted(u), dtype=int) for u in clusters.served_ut]
        self.pairs = [(l, int(k)) for l in range(self.n_bs) for k in self.bs_uts[l]]
        self._row = {pair: i for i, pair in enumerate(self.pairs)}
        self.bs_rows = []
        start = 0
        for l in range(self.n_bs):
            n = len(self.bs_uts[l])
            self.bs_rows.append(slice(start, start + n))
            start += n
        self.n_blocks = len(self.pairs)
        self.dim = self.n_blocks * self.block_len
        self.row_bs = np.array([l for l, _ in self.pairs], dtype=int)
        self.nonempty_bs = np.array([len(u) > 0 for u in self.bs_uts], dtype=bool)

    def row(self, l: int, k: int) -> int:
        try:
            return self._row[(l, k)]
        except KeyError:
            raise KeyError(f"pair (BS {l}, UT {k}) is not active") from None

    def same_as(self, other: "BlockLayout") -> bool:
        return self.M_t == other.M_t and self.pairs == other.pairs


class PrecoderState:
    """Stacked real precoder restricted to the active (BS, UT) pairs.

    blocks has shape (n_blocks, 2*M_t) with rows in the canonical layout
    order. Instances are value objects: the array is frozen on construction so
    states can be shared across threads read-only.
    """

    def __init__(self, layout: BlockLayout, blocks: np.ndarray, copy: bool = True):
        arr = np.array(blocks, dtype=float, copy=copy)
        if arr.shape != (layout.n_blocks, layout.block_len):
            raise ValueError(
                f"blocks must have shape {(layout.n_blocks, layout.block_len)}, "
                f"got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("precoder blocks must be finite")
        arr.setflags(write=False)
        self.layout = layout
        self.blocks = arr

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "PrecoderState":
        return cls(layout, np.zeros((layout.n_blocks, layout.block_len)), copy=False)

    @classmethod
    def from_complex(cls, layout: BlockLayout, cblocks: np.ndarray) -> "PrecoderState":
        cblocks = np.asarray(cblocks, dtype=complex)
        if cblocks.shape != (layout.n_blocks, layout.M_t):
            raise ValueError("complex blocks must have shape (n_blocks, M_t)")
        return cls(layout, np.hstack([cblocks.real, cblocks.imag]), copy=False)

    def block(self, l: int, k: int) -> np.ndarray:
        return self.blocks[self.layout.row(l, k)]

    def complex_blocks(self) -> np.ndarray:
        m = self.layout.M_t
        return self.blocks[:, :m] + 1j * self.blocks[:, m:]

    def with_blocks(self, blocks: np.ndarray) -> "PrecoderState":
        return PrecoderState(self.layout, blocks)


# Momenta share the container and layout of the precoder they accompany.
MomentumState = PrecoderState


def stack(state: PrecoderState) -> np.ndarray:
    """Concatenate all active blocks in canonical order into one flat vector."""
    return state.blocks.ravel().copy()


def unstack(vec: np.ndarray, layout: BlockLayout) -> PrecoderState:
    """Inverse of stack for the given layout."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.size != layout.dim:
        raise ValueError(f"stacked vector must have length {layout.dim}, got {vec.size}")
    return PrecoderState(layout, vec.reshape(layout.n_blocks, layout.block_len))


def bs_block_norms(state: PrecoderState) -> np.ndarray:
    """Per-BS transmit power: entry l is sum_{k in U_l} ||p_hat_{l,k}||^2."""
    row_power = np.sum(state.blocks**2, axis=1)
    out = np.zeros(state.layout.n_bs)
    for l, rows in enumerate(state.layout.bs_rows):
        out[l] = row_power[rows].sum()
    return out


def renormalize_power(state: PrecoderState, budget: PowerBudget) -> PrecoderState:
    """Scale each nonempty BS block group to exactly its power limit."""
    if budget.n_bs != state.layout.n_bs:
        raise ValueError("power budget length must match the number of BSs")
    powers = bs_block_norms(state)
    blocks = np.array(state.blocks)
    for l, rows in enumerate(state.layout.bs_rows):
        if rows.stop == rows.start:
            continue
        if powers[l] <= 0.0:
            raise ValueError(f"cannot renormalize zero-power blocks of BS {l}")
        blocks[rows] *= np.sqrt(budget.rho[l] / powers[l])
    return PrecoderState(state.layout, blocks, copy=False)


def save_precoder(path, state: PrecoderState) -> None:
    """Dump a PrecoderState as flat binary.

    Layout: int64 B, K, M_t, n_blocks; then per active block in canonical
    order: int64 l, int64 k, 2*M_t float64 (stacked re parts then im parts).
    """
    lay = state.layout
    with open(path, "wb") as f:
        np.array([lay.n_bs, lay.n_ut, lay.M_t, lay.n_blocks], dtype=np.int64).tofile(f)
        for i, (l, k) in enumerate(lay.pairs):
            np.array([l, k], dtype=np.int64).tofile(f)
            state.blocks[i].astype(np.float64).tofile(f)


def load_precoder(path) -> PrecoderState:
    """Inverse of save_precoder; rebuilds the cluster map from the stored pairs."""
    with open(path, "rb") as f:
        header = np.fromfile(f, dtype=np.int64, count=4)
        if header.size != 4:
            raise ValueError("truncated precoder file header")
        n_bs, n_ut, m_t, n_blocks = (int(x) for x in header)
        pairs = []
        rows = np.zeros((n_blocks, 2 * m_t))
        for i in range(n_blocks):
            idx = np.fromfile(f, dtype=np.int64, count=2)
            data = np.fromfile(f, dtype=np.float64, count=2 * m_t)
            if idx.size != 2 or data.size != 2 * m_t:
                raise ValueError("truncated precoder file body")
            pairs.append((int(idx[0]), int(idx[1])))
            rows[i] = data
    serving = [[] for _ in range(n_ut)]
    for l, k in pairs:
        serving[k].append(l)
    clusters = ClusterMap.from_serving(serving, n_bs)
    layout = BlockLayout(clusters, m_t)
    blocks = np.zeros((layout.n_blocks, layout.block_len))
    for (l, k), row in zip(pairs, rows):
        blocks[layout.row(l, k)] = row
    return PrecoderState(layout, blocks, copy=False)
