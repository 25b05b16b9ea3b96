"""Sparse indicator features over a hashed (or interned) vocabulary.

Two families: query-shape features, which describe how a query was
derived from its mention and never look at the candidate entity, and
query-entity features, which capture anchor-count priors, title string
match, and a discretized tf-idf cosine between the source document and
the candidate's article body.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConvlinkError
from .kb import NULL_ENTITY, KnowledgeBase, Query, normalize_anchor

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes; platform-independent."""
    h = FNV_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


class FeatureVocabulary:
    """Maps feature strings to integer indices.

    ``hashed`` mode is stateless: index = fnv1a64(feature) mod capacity,
    identical across runs and platforms; collisions are accepted.
    ``interned`` mode assigns dense indices on first sight (useful for
    small, inspectable models).
    """

    def __init__(self, mode: str = "hashed", capacity: int = 2 ** 20,
                 interned=None):
        if mode not in ("hashed", "interned"):
            raise ValueError("mode must be 'hashed' or 'interned'")
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.mode = mode
        self.capacity = capacity
        self.interned = dict(interned) if interned else {}

    def index_of(self, feature: str) -> int:
        if self.mode == "hashed":
            return fnv1a64(feature) % self.capacity
        idx = self.interned.get(feature)
        if idx is None:
            if len(self.interned) >= self.capacity:
                raise ConvlinkError("interned vocabulary is full (%d)"
                                    % self.capacity)
            idx = len(self.interned)
            self.interned[feature] = idx
        return idx

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "capacity": self.capacity}
        if self.mode == "interned":
            out["interned"] = self.interned
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureVocabulary":
        return cls(data["mode"], data["capacity"], data.get("interned"))


@dataclass
class SparseVector:
    indices: list
    values: list

    def __iter__(self):
        return iter(zip(self.indices, self.values))

    def __len__(self):
        return len(self.indices)

    @classmethod
    def from_features(cls, features, vocab: FeatureVocabulary,
                      value: float = 1.0) -> "SparseVector":
        """Hash feature strings; colliding indices merge by summing."""
        acc = {}
        for f in features:
            idx = vocab.index_of(f)
            acc[idx] = acc.get(idx, 0.0) + value
        items = sorted(acc.items())
        return cls([i for i, _ in items], [v for _, v in items])


# ---------------------------------------------------------------------------
# Query-shape features (candidate-independent)
# ---------------------------------------------------------------------------

def _length_bucket(n: int) -> str:
    return str(n) if n <= 3 else "4+"


def query_feature_strings(mention_tokens, query: Query) -> list:
    feats = []
    flags = sorted(query.flags)
    for flag in flags:
        feats.append("q:flag=%s" % flag)
    bucket = _length_bucket(len(mention_tokens))
    feats.append("q:flags=%s|mlen=%s" % ("+".join(flags), bucket))
    words = query.text.split()
    feats.append("q:first=%s" % words[0])
    feats.append("q:last=%s" % words[-1])
    if query.tokens and all(t.pos is not None for t in query.tokens):
        feats.append("q:pos=%s" % "-".join(t.pos for t in query.tokens))
    if query.tokens and all(t.ner is not None for t in query.tokens):
        feats.append("q:ner=%s" % "-".join(t.ner for t in query.tokens))
    return feats


def features_q(mention_tokens, query: Query,
               vocab: FeatureVocabulary) -> SparseVector:
    return SparseVector.from_features(
        query_feature_strings(mention_tokens, query), vocab)


# ---------------------------------------------------------------------------
# Query-entity features
# ---------------------------------------------------------------------------

NULL_FEATURE = "e:null"

TFIDF_BUCKET_WIDTH = 0.05
N_TFIDF_BUCKETS = 20


def _count_bucket(count: int) -> int:
    """0 for unseen, else 1 + floor(log2 count): 0, [1,2), [2,4), [4,8), ..."""
    return count.bit_length()


def _rank_bucket(rank: int) -> str:
    if rank <= 2:
        return str(rank)
    return "3-5" if rank <= 5 else "6+"


def tfidf_bucket(cos: float) -> int:
    return min(int(cos / TFIDF_BUCKET_WIDTH), N_TFIDF_BUCKETS - 1)


def _title_match(query_text: str, title: str):
    t = normalize_anchor(title.replace("_", " "))
    q = query_text
    if q == t:
        return "exact"
    if t.startswith(q):
        return "prefix"
    if q in t:
        return "substring"
    return None


def entity_feature_strings(kb: KnowledgeBase, query: Query, entity,
                           tfidf: "TfIdfModel", doc_tokens,
                           body_tokens) -> list:
    if entity == NULL_ENTITY or entity is None:
        return [NULL_FEATURE]
    feats = []
    count = kb.anchor_count(query.text, entity)
    feats.append("e:count_bucket=%d" % _count_bucket(count))
    if count > 0:
        rank = kb.rank_of(query.text, entity)
        feats.append("e:rank=%s" % _rank_bucket(rank))
    match = _title_match(query.text, kb.title(entity))
    if match is not None:
        feats.append("e:title=%s" % match)
    cos = tfidf.cosine(doc_tokens, body_tokens)
    feats.append("e:tfidf_bucket=%d" % tfidf_bucket(cos))
    return feats


def features_e(kb: KnowledgeBase, query: Query, entity, tfidf: "TfIdfModel",
               doc_tokens, body_tokens,
               vocab: FeatureVocabulary) -> SparseVector:
    return SparseVector.from_features(
        entity_feature_strings(kb, query, entity, tfidf, doc_tokens,
                               body_tokens), vocab)


# ---------------------------------------------------------------------------
# tf-idf over the knowledge-base article corpus
# ---------------------------------------------------------------------------

class TfIdfModel:
    """Bag-of-words tf-idf with raw term counts.

    idf(t) = max(0, ln(corpus_size / (1 + df(t)))); the clamp keeps all
    weights nonnegative so cosines stay in [0, 1].  Tokens are
    case-folded.
    """

    def __init__(self, df: dict, corpus_size: int):
        self.df = df
        self.corpus_size = corpus_size

    @classmethod
    def from_documents(cls, token_lists) -> "TfIdfModel":
        df = Counter()
        n = 0
        for tokens in token_lists:
            n += 1
            df.update({t.lower() for t in tokens})
        return cls(dict(df), n)

    @classmethod
    def from_kb(cls, kb: KnowledgeBase) -> "TfIdfModel":
        from .textproc import tokenize
        bodies = ([t.surface for t in tokenize(kb.body(eid))]
                  for eid in sorted(kb.entities))
        return cls.from_documents(bodies)

    def idf(self, token: str) -> float:
        if self.corpus_size == 0:
            return 0.0
        return max(0.0, math.log(self.corpus_size / (1 + self.df.get(token, 0))))

    def _weights(self, tokens) -> dict:
        tf = Counter(t.lower() for t in tokens)
        out = {}
        for tok, count in tf.items():
            w = count * self.idf(tok)
            if w > 0.0:
                out[tok] = w
        return out

    def cosine(self, a_tokens, b_tokens) -> float:
        """Cosine of tf-idf weighted bags; 0 when either side is empty or
        carries no positive weight."""
        wa = self._weights(a_tokens)
        wb = self._weights(b_tokens)
        if not wa or not wb:
            return 0.0
        dot = 0.0
        for tok, w in wa.items():
            if tok in wb:
                dot += w * wb[tok]
        if dot == 0.0:
            return 0.0
        na = math.sqrt(sum(w * w for w in wa.values()))
        nb = math.sqrt(sum(w * w for w in wb.values()))
        return min(1.0, max(0.0, dot / (na * nb)))
