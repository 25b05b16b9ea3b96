"""Convolutional text encoders and the six-way cosine feature extractor.

Each granularity g has a filter bank M_g of shape (k, d*ell).  A token
sequence embedded as rows w_1..w_n is encoded by sliding a width-ell
window, applying the bank, rectifying, and sum pooling:

    v_g[r] = sum_j max(0, M_g[r] . concat(w_j, ..., w_{j+ell-1}))

with j ranging over all n' - ell + 1 windows of the (possibly padded)
length-n' sequence.  Sequences shorter than ell are zero-padded
symmetrically to length ell so every input yields at least one window.
Topic vectors from the three source granularities and two target
granularities are compared pairwise with cosine similarity, producing
six dense features with exact analytic gradients for every bank.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ALL_PAIRS_MASK, COSINE_PAIRS, GRANULARITIES, N_DENSE
from .errors import CacheError, DimensionError

COSINE_EPS = 1e-12


@dataclass
class FilterBank:
    granularity: str
    M: np.ndarray       # (k, d*ell)
    ell: int
    d: int

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError("unknown granularity %r" % self.granularity)
        if self.ell < 1 or self.d < 1:
            raise DimensionError("ell and d must be positive")
        if self.M.ndim != 2 or self.M.shape[0] < 1:
            raise DimensionError("filter bank must be a (k, d*ell) matrix with k >= 1")
        if self.M.shape[1] != self.d * self.ell:
            raise DimensionError(
                "bank has %d columns, expected d*ell = %d"
                % (self.M.shape[1], self.d * self.ell))

    @property
    def k(self) -> int:
        return self.M.shape[0]


def init_bank(granularity: str, k: int, ell: int, d: int,
              rng: np.random.Generator) -> FilterBank:
    """Uniform(-a, a) with a = sqrt(6 / (d*ell + k)) keeps initial window
    responses moderate."""
    a = np.sqrt(6.0 / (d * ell + k))
    M = rng.uniform(-a, a, size=(k, d * ell))
    return FilterBank(granularity, M, ell, d)


@dataclass
class CnnParams:
    banks: dict     # granularity -> FilterBank

    def __post_init__(self):
        if set(self.banks) != set(GRANULARITIES):
            raise ValueError("need exactly one bank per granularity")
        dims = {(b.k, b.ell, b.d) for b in self.banks.values()}
        if len(dims) != 1:
            raise DimensionError("all banks must share k, ell and d")

    @classmethod
    def initialize(cls, k: int, ell: int, d: int, seed: int = 0) -> "CnnParams":
        rng = np.random.default_rng(seed)
        return cls({g: init_bank(g, k, ell, d, rng) for g in GRANULARITIES})

    @property
    def k(self):
        return next(iter(self.banks.values())).k

    @property
    def ell(self):
        return next(iter(self.banks.values())).ell

    @property
    def d(self):
        return next(iter(self.banks.values())).d

    def zero_gradients(self) -> dict:
        return {g: np.zeros_like(b.M) for g, b in self.banks.items()}


@dataclass
class TopicVector:
    v: np.ndarray
    granularity: str


@dataclass
class DenseFeatures:
    """The six cosine features, ordered as in ``config.COSINE_PAIRS``."""
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (N_DENSE,):
            raise DimensionError("dense feature vector must have %d entries"
                                 % N_DENSE)


def pad_to_width(X: np.ndarray, ell: int) -> np.ndarray:
    """Zero-pad a (n, d) sequence symmetrically up to ell rows."""
    n, d = X.shape
    if n >= ell:
        return X
    missing = ell - n
    before = missing // 2
    after = missing - before
    return np.vstack([np.zeros((before, d)), X, np.zeros((after, d))])


def window_matrix(X: np.ndarray, ell: int) -> np.ndarray:
    """All width-ell windows as rows of concatenated embeddings."""
    P = pad_to_width(X, ell)
    n, d = P.shape
    m = n - ell + 1
    if m == 1:
        return P.reshape(1, ell * d)
    view = np.lib.stride_tricks.sliding_window_view(P, (ell, d))
    return view.reshape(m, ell * d)


def _encode_raw(M: np.ndarray, W: np.ndarray):
    """Pre-activations (windows x k) and the pooled topic vector."""
    A = W @ M.T
    v = np.maximum(A, 0.0).sum(axis=0)
    return A, v


def encode(bank: FilterBank, sequence: np.ndarray) -> TopicVector:
    """Apply one filter bank to an embedded (n, d) sequence."""
    if sequence.ndim != 2 or sequence.shape[1] != bank.d:
        raise DimensionError(
            "sequence width %s does not match bank dimension %d"
            % (sequence.shape[1:] or "scalar", bank.d))
    W = window_matrix(sequence, bank.ell)
    _, v = _encode_raw(bank.M, W)
    return TopicVector(v=v, granularity=bank.granularity)


def cosine(a, b) -> float:
    """Cosine similarity; defined as 0 when either norm is below epsilon."""
    u = a.v if isinstance(a, TopicVector) else a
    w = b.v if isinstance(b, TopicVector) else b
    if u.shape != w.shape:
        raise DimensionError("topic vectors differ in length")
    nu = np.linalg.norm(u)
    nw = np.linalg.norm(w)
    if nu < COSINE_EPS or nw < COSINE_EPS:
        return 0.0
    return float(np.clip(np.dot(u, w) / (nu * nw), -1.0, 1.0))


@dataclass
class ForwardState:
    """Cached forward pass for one (source, target) pair."""
    params: CnnParams
    mask: tuple
    null_target: bool
    windows: dict = field(default_factory=dict)     # granularity -> W
    preacts: dict = field(default_factory=dict)     # granularity -> A
    topics: dict = field(default_factory=dict)      # granularity -> v
    fc: np.ndarray = None


def forward_from_matrices(params: CnnParams, mats: dict,
                          mask: tuple = ALL_PAIRS_MASK) -> ForwardState:
    """Run the encoders named by ``mask`` over pre-embedded matrices.

    ``mats`` maps granularity to an (n, d) embedding matrix; pass
    ``None`` for the whole dict to mark a NULL target, which fixes all
    six features at zero.
    """
    state = ForwardState(params=params, mask=tuple(mask),
                         null_target=mats is None)
    fc = np.zeros(N_DENSE)
    if state.null_target:
        state.fc = fc
        return state
    needed = set()
    for on, (src, tgt) in zip(mask, COSINE_PAIRS):
        if on:
            needed.add(src)
            needed.add(tgt)
    for g in needed:
        bank = params.banks[g]
        X = mats[g]
        if X.shape[1] != bank.d:
            raise DimensionError("embedded width %d != bank dimension %d"
                                 % (X.shape[1], bank.d))
        W = window_matrix(X, bank.ell)
        A, v = _encode_raw(bank.M, W)
        state.windows[g] = W
        state.preacts[g] = A
        state.topics[g] = v
    for i, (on, (src, tgt)) in enumerate(zip(mask, COSINE_PAIRS)):
        if on:
            fc[i] = cosine(state.topics[src], state.topics[tgt])
    state.fc = fc
    return state


def extract_fc(params: CnnParams, source_views, target, table,
               mask: tuple = ALL_PAIRS_MASK) -> DenseFeatures:
    """Dense features for one (mention views, candidate target) pair.

    ``target`` is a (title_tokens, body_tokens) pair, or None for the
    NULL candidate (all-zero features).
    """
    state = extract_fc_with_state(params, source_views, target, table, mask)
    return DenseFeatures(values=state.fc.copy())


def extract_fc_with_state(params: CnnParams, source_views, target, table,
                          mask: tuple = ALL_PAIRS_MASK) -> ForwardState:
    if target is None:
        return forward_from_matrices(params, None, mask)
    title_tokens, body_tokens = target
    mats = embed_views(table, source_views)
    mats["tgt_title"] = table.lookup_sequence([t.surface for t in title_tokens])
    mats["tgt_document"] = table.lookup_sequence([t.surface for t in body_tokens])
    return forward_from_matrices(params, mats, mask)


def embed_views(table, views) -> dict:
    return {
        "src_mention": table.lookup_sequence([t.surface for t in views.mention_tokens]),
        "src_context": table.lookup_sequence([t.surface for t in views.context_tokens]),
        "src_document": table.lookup_sequence([t.surface for t in views.document_tokens]),
    }


def backward(params: CnnParams, state: ForwardState,
             upstream: np.ndarray) -> dict:
    """Gradient of ``upstream . fc`` w.r.t. every filter bank.

    The ReLU subgradient at exactly zero is taken as zero; cosine
    gradients are zero inside the epsilon guard region.  Returns a dict
    granularity -> dM with the same shapes as the banks.
    """
    if state is None or state.fc is None:
        raise CacheError("backward requires the cached forward state")
    if state.params is not params:
        raise CacheError("forward state was computed for different parameters")
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (N_DENSE,):
        raise DimensionError("upstream gradient must have %d entries" % N_DENSE)
    grads = params.zero_gradients()
    if state.null_target:
        return grads
    dv = {g: np.zeros(params.k) for g in state.topics}
    for i, (on, (src, tgt)) in enumerate(zip(state.mask, COSINE_PAIRS)):
        if not on or upstream[i] == 0.0:
            continue
        u = state.topics[src]
        w = state.topics[tgt]
        nu = np.linalg.norm(u)
        nw = np.linalg.norm(w)
        if nu < COSINE_EPS or nw < COSINE_EPS:
            continue
        c = np.dot(u, w) / (nu * nw)
        dv[src] += upstream[i] * (w / (nu * nw) - c * u / (nu * nu))
        dv[tgt] += upstream[i] * (u / (nu * nw) - c * w / (nw * nw))
    for g, dvg in dv.items():
        if not np.any(dvg):
            continue
        A = state.preacts[g]
        W = state.windows[g]
        dA = (A > 0.0) * dvg[np.newaxis, :]
        grads[g] += dA.T @ W
    return grads
