"""Configuration dataclasses and the fixed feature geometry.

Five encoders (three over the source side, two over the target side)
produce topic vectors that are compared pairwise with cosine similarity.
The pairing order below defines the six dense feature slots and is part
of the model file format, so it must never be reordered.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

SRC_MENTION = "src_mention"
SRC_CONTEXT = "src_context"
SRC_DOCUMENT = "src_document"
TGT_TITLE = "tgt_title"
TGT_DOCUMENT = "tgt_document"

GRANULARITIES = (SRC_MENTION, SRC_CONTEXT, SRC_DOCUMENT, TGT_TITLE, TGT_DOCUMENT)

# Dense feature slot i compares COSINE_PAIRS[i][0] against COSINE_PAIRS[i][1].
COSINE_PAIRS = (
    (SRC_MENTION, TGT_TITLE),
    (SRC_MENTION, TGT_DOCUMENT),
    (SRC_CONTEXT, TGT_TITLE),
    (SRC_CONTEXT, TGT_DOCUMENT),
    (SRC_DOCUMENT, TGT_TITLE),
    (SRC_DOCUMENT, TGT_DOCUMENT),
)

N_DENSE = len(COSINE_PAIRS)

ALL_PAIRS_MASK = (True,) * N_DENSE


def pair_index(src: str, tgt: str) -> int:
    return COSINE_PAIRS.index((src, tgt))


@dataclass(frozen=True)
class FeatureToggles:
    """Which feature blocks participate in scoring.

    ``use_sparse`` gates the indicator features (query shape and
    query-entity compatibility); the NULL-candidate indicator is always
    emitted because NULL has no other signal.  ``dense_mask`` selects a
    subset of the six cosine slots; masked slots are fixed at zero and
    receive no gradient.
    """

    use_sparse: bool = True
    use_dense: bool = True
    dense_mask: tuple = ALL_PAIRS_MASK

    def __post_init__(self):
        if len(self.dense_mask) != N_DENSE:
            raise ValueError("dense_mask must have %d entries" % N_DENSE)

    @classmethod
    def full(cls) -> "FeatureToggles":
        return cls()

    @classmethod
    def sparse_only(cls) -> "FeatureToggles":
        return cls(use_sparse=True, use_dense=False)

    @classmethod
    def cnn_only(cls, mask: tuple = ALL_PAIRS_MASK) -> "FeatureToggles":
        return cls(use_sparse=False, use_dense=True, dense_mask=tuple(mask))

    @classmethod
    def cnn_pair(cls, src: str, tgt: str) -> "FeatureToggles":
        mask = [False] * N_DENSE
        mask[pair_index(src, tgt)] = True
        return cls.cnn_only(tuple(mask))

    def active_granularities(self) -> frozenset:
        if not self.use_dense:
            return frozenset()
        needed = set()
        for flag, (src, tgt) in zip(self.dense_mask, COSINE_PAIRS):
            if flag:
                needed.add(src)
                needed.add(tgt)
        return frozenset(needed)


TOGGLE_PRESETS = {
    "full": FeatureToggles.full,
    "sparse-only": FeatureToggles.sparse_only,
    "cnn-only": FeatureToggles.cnn_only,
}


def toggles_from_name(name: str) -> FeatureToggles:
    """Resolve a configuration name; ``pair:src_doc*tgt_doc`` style names
    select a single cosine slot on top of cnn-only."""
    if name in TOGGLE_PRESETS:
        return TOGGLE_PRESETS[name]()
    if name.startswith("pair:"):
        spec = name[len("pair:"):]
        src, _, tgt = spec.partition("*")
        return FeatureToggles.cnn_pair(src.strip(), tgt.strip())
    raise ValueError("unknown feature configuration %r" % name)


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyperparameters shared by every module.

    ``d`` must match the embedding file actually loaded; ``k`` and
    ``ell`` shape all five filter banks uniformly.
    """

    d: int = 300
    k: int = 150
    ell: int = 5
    context_window: int = 10
    doc_cap: int = 2000
    top_k: int = 30
    vocab_mode: str = "hashed"  # "hashed" or "interned"
    hash_capacity: int = 2 ** 20
    init_seed: int = 0
    toggles: FeatureToggles = field(default_factory=FeatureToggles)

    def __post_init__(self):
        for name in ("d", "k", "ell", "context_window", "doc_cap", "top_k",
                     "hash_capacity"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be positive" % name)
        if self.vocab_mode not in ("hashed", "interned"):
            raise ValueError("vocab_mode must be 'hashed' or 'interned'")

    def with_toggles(self, toggles: FeatureToggles) -> "ModelConfig":
        return replace(self, toggles=toggles)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["toggles"]["dense_mask"] = list(self.toggles.dense_mask)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        tog = dict(data.pop("toggles"))
        tog["dense_mask"] = tuple(bool(x) for x in tog["dense_mask"])
        return cls(toggles=FeatureToggles(**tog), **data)
