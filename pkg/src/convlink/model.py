"""Latent-query log-linear model over (candidate, query) pairs.

The joint score of candidate t and query q for a mention x is

    s(t, q) = w_sparse . (f_Q(x, q) + f_E(x, q, t)) + w_dense . f_C(x, t)

and P(t, q | x) is the softmax over all pairs.  Predictions marginalize
the latent query: P(t | x) = sum_q P(t, q | x).  Training maximizes the
marginal log-likelihood of gold entities with per-example Adadelta
updates; the dense-feature gradient backpropagates through all five
convolutional filter banks.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cnn, sparse
from .binfile import read_framed, write_framed
from .config import GRANULARITIES, ModelConfig, N_DENSE
from .embeddings import EmbeddingTable
from .errors import LoadError, TrainingError
from .kb import (NULL_ENTITY, CandidateSet, KnowledgeBase, candidates_for,
                 generate_queries)
from .sparse import FeatureVocabulary, SparseVector, TfIdfModel
from .textproc import Document, Mention, extract_target_views, extract_views

MODEL_MAGIC = b"CLMD1"
MODEL_VERSION = 1


@dataclass
class Model:
    config: ModelConfig
    vocab: FeatureVocabulary
    w_sparse: dict                  # feature index -> weight
    w_dense: np.ndarray             # (6,)
    cnn_params: cnn.CnnParams

    @classmethod
    def initialize(cls, config: ModelConfig) -> "Model":
        vocab = FeatureVocabulary(config.vocab_mode, config.hash_capacity)
        params = cnn.CnnParams.initialize(config.k, config.ell, config.d,
                                          seed=config.init_seed)
        return cls(config=config, vocab=vocab, w_sparse={},
                   w_dense=np.zeros(N_DENSE), cnn_params=params)


class TargetCache:
    """Tokenized and embedded target views, shared across mentions."""

    def __init__(self, kb: KnowledgeBase, table: EmbeddingTable,
                 config: ModelConfig, embed: bool):
        self.kb = kb
        self.table = table
        self.config = config
        self.embed = embed
        self._cache = {}

    def get(self, entity: str):
        if entity == NULL_ENTITY:
            return None
        hit = self._cache.get(entity)
        if hit is None:
            title_toks, body_toks = extract_target_views(
                self.kb.title(entity), self.kb.body(entity),
                doc_cap=self.config.doc_cap)
            mats = None
            if self.embed:
                mats = {
                    "tgt_title": self.table.lookup_sequence(
                        [t.surface for t in title_toks]),
                    "tgt_document": self.table.lookup_sequence(
                        [t.surface for t in body_toks]),
                }
            hit = (title_toks, body_toks, mats)
            self._cache[entity] = hit
        return hit


@dataclass
class PreparedMention:
    """Everything about one mention that does not depend on the weights."""
    doc_id: str
    mention: Mention
    queries: list
    cand: CandidateSet
    source_mats: Optional[dict]          # granularity -> (n, d), None if unused
    target_mats: list                    # per candidate: dict or None (NULL)
    fq: list                             # per query: SparseVector
    fe: list                             # [t][q] -> SparseVector
    gold_index: Optional[int]            # index into cand.candidates, or None

    @property
    def gold(self):
        return self.mention.gold_entity


def prepare_mention(model: Model, kb: KnowledgeBase, table: EmbeddingTable,
                    tfidf: TfIdfModel, doc: Document, mention: Mention,
                    targets: TargetCache = None) -> PreparedMention:
    cfg = model.config
    tog = cfg.toggles
    views = extract_views(doc.tokens, mention,
                          context_window=cfg.context_window,
                          doc_cap=cfg.doc_cap)
    queries = generate_queries(views.mention_tokens)
    cand = candidates_for(kb, queries, top_k=cfg.top_k)
    if targets is None:
        targets = TargetCache(kb, table, cfg, embed=tog.use_dense)

    source_mats = cnn.embed_views(table, views) if tog.use_dense else None
    doc_surfaces = [t.surface for t in views.document_tokens]

    target_mats = []
    fe = []
    fq = []
    if tog.use_sparse:
        fq = [sparse.features_q(views.mention_tokens, q, model.vocab)
              for q in queries]
    else:
        fq = [SparseVector([], []) for _ in queries]

    for entity in cand.candidates:
        tgt = targets.get(entity)
        target_mats.append(None if tgt is None else tgt[2])
        row = []
        for q in queries:
            if entity == NULL_ENTITY:
                row.append(SparseVector.from_features([sparse.NULL_FEATURE],
                                                      model.vocab))
            elif tog.use_sparse:
                body_surfaces = [t.surface for t in tgt[1]]
                row.append(sparse.features_e(kb, q, entity, tfidf,
                                             doc_surfaces, body_surfaces,
                                             model.vocab))
            else:
                row.append(SparseVector([], []))
        fe.append(row)

    gold_index = None
    if mention.gold_entity is not None and mention.gold_entity in cand.candidates:
        gold_index = cand.candidates.index(mention.gold_entity)
    return PreparedMention(doc_id=doc.doc_id, mention=mention, queries=queries,
                           cand=cand, source_mats=source_mats,
                           target_mats=target_mats, fq=fq, fe=fe,
                           gold_index=gold_index)


def _sparse_dot(weights: dict, vec: SparseVector) -> float:
    total = 0.0
    for idx, val in vec:
        w = weights.get(idx)
        if w is not None:
            total += w * val
    return total


@dataclass
class ScoreTable:
    candidates: list
    queries: list
    S: np.ndarray                 # (T, Q) pair scores
    fc: np.ndarray                # (T, 6) dense features (zeros when unused)
    states: list                  # per candidate ForwardState or None
    sparse_part: np.ndarray       # (T, Q) sparse contribution


def score_pairs(model: Model, prep: PreparedMention) -> ScoreTable:
    """Score every (candidate, query) pair; dense features are computed
    once per candidate and shared across queries."""
    tog = model.config.toggles
    T = len(prep.cand.candidates)
    Q = len(prep.queries)
    fc = np.zeros((T, N_DENSE))
    states = [None] * T
    if tog.use_dense:
        for ti in range(T):
            mats = prep.target_mats[ti]
            if mats is None:
                state = cnn.forward_from_matrices(model.cnn_params, None,
                                                  tog.dense_mask)
            else:
                full = dict(prep.source_mats)
                full.update(mats)
                state = cnn.forward_from_matrices(model.cnn_params, full,
                                                  tog.dense_mask)
            states[ti] = state
            fc[ti] = state.fc
    dense_part = fc @ model.w_dense
    sparse_part = np.zeros((T, Q))
    fq_dots = [_sparse_dot(model.w_sparse, v) for v in prep.fq]
    for ti in range(T):
        row = prep.fe[ti]
        for qi in range(Q):
            sparse_part[ti, qi] = fq_dots[qi] + _sparse_dot(model.w_sparse,
                                                            row[qi])
    S = sparse_part + dense_part[:, np.newaxis]
    return ScoreTable(candidates=prep.cand.candidates, queries=prep.queries,
                      S=S, fc=fc, states=states, sparse_part=sparse_part)


def marginals_from_scores(S: np.ndarray):
    """Stable softmax over all pairs; returns (P(t), P(t, q))."""
    m = S.max()
    E = np.exp(S - m)
    Z = E.sum()
    Ppair = E / Z
    return Ppair.sum(axis=1), Ppair


@dataclass
class ScoredCandidate:
    entity: str
    marginal_prob: float
    best_query: object
    breakdown: dict = field(default_factory=dict)


def infer(model: Model, prep: PreparedMention) -> list:
    """Marginal distribution over candidates, sorted by probability
    descending with ties broken by entity id."""
    table = score_pairs(model, prep)
    Pt, _ = marginals_from_scores(table.S)
    out = []
    for ti, entity in enumerate(table.candidates):
        qi = int(np.argmax(table.S[ti]))
        breakdown = {
            "sparse": float(table.sparse_part[ti, qi]),
            "dense": (table.fc[ti] * model.w_dense).tolist(),
        }
        out.append(ScoredCandidate(entity=entity, marginal_prob=float(Pt[ti]),
                                   best_query=table.queries[qi],
                                   breakdown=breakdown))
    out.sort(key=lambda s: (-s.marginal_prob, s.entity))
    return out


def predict(model: Model, prep: PreparedMention) -> ScoredCandidate:
    return infer(model, prep)[0]


@dataclass
class GradBundle:
    sparse: dict                 # feature index -> gradient
    dense: np.ndarray            # (6,)
    banks: dict                  # granularity -> dM


def loss_and_grad(model: Model, prep: PreparedMention):
    """Negative marginal log-likelihood and its exact gradient.

    Returns None when the gold entity is missing from the candidate set
    (the caller counts these as skips).
    """
    if prep.gold_index is None:
        return None
    tog = model.config.toggles
    table = score_pairs(model, prep)
    S = table.S
    ti_gold = prep.gold_index
    m = S.max()
    lse_all = m + math.log(np.exp(S - m).sum())
    row = S[ti_gold]
    mr = row.max()
    lse_gold = mr + math.log(np.exp(row - mr).sum())
    loss = lse_all - lse_gold

    Pt, Ppair = marginals_from_scores(S)
    Pq_gold = np.exp(row - lse_gold)

    coef = Ppair.copy()
    coef[ti_gold] -= Pq_gold

    g_sparse = {}

    def accumulate(vec: SparseVector, c: float):
        for idx, val in vec:
            g_sparse[idx] = g_sparse.get(idx, 0.0) + c * val

    q_coefs = coef.sum(axis=0)
    for qi, c in enumerate(q_coefs):
        if c != 0.0:
            accumulate(prep.fq[qi], c)
    for ti in range(len(table.candidates)):
        row_fe = prep.fe[ti]
        crow = coef[ti]
        for qi, c in enumerate(crow):
            if c != 0.0:
                accumulate(row_fe[qi], c)

    mask = np.array(tog.dense_mask, dtype=float)
    t_coefs = Pt.copy()
    t_coefs[ti_gold] -= 1.0
    g_dense = (t_coefs[:, np.newaxis] * table.fc).sum(axis=0) * mask

    g_banks = model.cnn_params.zero_gradients()
    if tog.use_dense:
        wd = model.w_dense * mask
        for ti, c in enumerate(t_coefs):
            state = table.states[ti]
            if state is None or state.null_target or c == 0.0:
                continue
            upstream = c * wd
            for g, dM in cnn.backward(model.cnn_params, state, upstream).items():
                g_banks[g] += dM
    return loss, GradBundle(sparse=g_sparse, dense=g_dense, banks=g_banks)


# ---------------------------------------------------------------------------
# Adadelta training
# ---------------------------------------------------------------------------

class AdadeltaState:
    """Per-parameter running averages E[g^2] and E[dx^2]."""

    def __init__(self, model: Model, rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.dense_g2 = np.zeros(N_DENSE)
        self.dense_dx2 = np.zeros(N_DENSE)
        self.bank_g2 = {g: np.zeros_like(b.M)
                        for g, b in model.cnn_params.banks.items()}
        self.bank_dx2 = {g: np.zeros_like(b.M)
                         for g, b in model.cnn_params.banks.items()}
        self.sparse = {}     # index -> [E[g^2], E[dx^2]]

    def _dense_step(self, g2, dx2, g):
        g2 *= self.rho
        g2 += (1.0 - self.rho) * g * g
        dx = -np.sqrt((dx2 + self.eps) / (g2 + self.eps)) * g
        dx2 *= self.rho
        dx2 += (1.0 - self.rho) * dx * dx
        return dx

    def apply(self, model: Model, grads: GradBundle) -> None:
        model.w_dense += self._dense_step(self.dense_g2, self.dense_dx2,
                                          grads.dense)
        for g, dM in grads.banks.items():
            step = self._dense_step(self.bank_g2[g], self.bank_dx2[g], dM)
            model.cnn_params.banks[g].M += step
        rho, eps = self.rho, self.eps
        for idx, grad in grads.sparse.items():
            st = self.sparse.get(idx)
            if st is None:
                st = [0.0, 0.0]
                self.sparse[idx] = st
            st[0] = rho * st[0] + (1.0 - rho) * grad * grad
            dx = -math.sqrt((st[1] + eps) / (st[0] + eps)) * grad
            st[1] = rho * st[1] + (1.0 - rho) * dx * dx
            model.w_sparse[idx] = model.w_sparse.get(idx, 0.0) + dx


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    n_mentions: int = 0
    n_unlabeled: int = 0
    mean_queries_per_mention: float = 0.0
    oov_rate: float = 0.0

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "n_mentions": self.n_mentions,
                "n_unlabeled": self.n_unlabeled,
                "mean_queries_per_mention": self.mean_queries_per_mention,
                "oov_rate": self.oov_rate}


def prepare_corpus(model: Model, kb: KnowledgeBase, table: EmbeddingTable,
                   docs, tfidf: TfIdfModel = None):
    """Prepare every labeled mention once; reused across epochs."""
    if tfidf is None:
        tfidf = TfIdfModel.from_kb(kb)
    targets = TargetCache(kb, table, model.config,
                          embed=model.config.toggles.use_dense)
    prepared = []
    n_unlabeled = 0
    for doc in docs:
        for mention in doc.mentions:
            if mention.gold_entity is None:
                n_unlabeled += 1
                continue
            prepared.append(prepare_mention(model, kb, table, tfidf, doc,
                                            mention, targets))
    return prepared, n_unlabeled


def train(model: Model, docs, kb: KnowledgeBase, table: EmbeddingTable,
          epochs: int, rho: float = 0.95, eps: float = 1e-6, seed: int = 0,
          tfidf: TfIdfModel = None, log=None):
    """Adadelta training over single-example minibatches.

    Example order is reshuffled each epoch from ``seed``; with a fixed
    seed and corpus the final weights are bit-identical across runs.
    """
    prepared, n_unlabeled = prepare_corpus(model, kb, table, docs, tfidf)
    report = TrainReport(n_mentions=len(prepared), n_unlabeled=n_unlabeled)
    if prepared:
        report.mean_queries_per_mention = (
            sum(len(p.queries) for p in prepared) / len(prepared))
    all_surfaces = [t.surface for doc in docs for t in doc.tokens]
    report.oov_rate = table.oov_rate(all_surfaces)

    state = AdadeltaState(model, rho=rho, eps=eps)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        order = rng.permutation(len(prepared))
        total = 0.0
        used = 0
        skipped = 0
        for i in order:
            prep = prepared[int(i)]
            out = loss_and_grad(model, prep)
            if out is None:
                skipped += 1
                continue
            loss, grads = out
            if not math.isfinite(loss):
                raise TrainingError("non-finite loss on doc %r" % prep.doc_id)
            state.apply(model, grads)
            total += loss
            used += 1
        in_cand = sum(1 for p in prepared if p.gold_index is not None)
        row = {
            "epoch": epoch,
            "mean_loss": total / used if used else float("nan"),
            "gold_recall": in_cand / len(prepared) if prepared else 0.0,
            "n_examples": used,
            "n_skipped": skipped,
        }
        report.epochs.append(row)
        if log is not None:
            log("epoch %d: mean_loss=%.4f gold_recall=%.3f skipped=%d"
                % (epoch, row["mean_loss"], row["gold_recall"], skipped))
    return model, report


# ---------------------------------------------------------------------------
# Serialization: framed binary, magic "CLMD1", trailing CRC32.
# ---------------------------------------------------------------------------

def _model_payload(model: Model) -> bytes:
    header = json.dumps({
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "n_sparse": len(model.w_sparse),
    }, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(header)), header]
    parts.append(np.ascontiguousarray(model.w_dense, dtype="<f8").tobytes())
    for g in GRANULARITIES:
        M = model.cnn_params.banks[g].M
        parts.append(np.ascontiguousarray(M, dtype="<f8").tobytes())
    for idx in sorted(model.w_sparse):
        parts.append(struct.pack("<Qd", idx, model.w_sparse[idx]))
    return b"".join(parts)


def save_model(model: Model, path) -> None:
    write_framed(path, MODEL_MAGIC, MODEL_VERSION, _model_payload(model))


def load_model(path) -> Model:
    _, payload = read_framed(path, MODEL_MAGIC,
                             supported_versions=(MODEL_VERSION,))
    try:
        (hlen,) = struct.unpack_from("<I", payload, 0)
        header = json.loads(payload[4:4 + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        vocab = FeatureVocabulary.from_dict(header["vocab"])
        off = 4 + hlen
        w_dense = np.frombuffer(payload, dtype="<f8", count=N_DENSE,
                                offset=off).copy()
        off += N_DENSE * 8
        banks = {}
        size = config.k * config.d * config.ell
        for g in GRANULARITIES:
            M = np.frombuffer(payload, dtype="<f8", count=size,
                              offset=off).copy().reshape(config.k,
                                                         config.d * config.ell)
            banks[g] = cnn.FilterBank(g, M, config.ell, config.d)
            off += size * 8
        w_sparse = {}
        for _ in range(header["n_sparse"]):
            idx, w = struct.unpack_from("<Qd", payload, off)
            w_sparse[idx] = w
            off += 16
        if off != len(payload):
            raise LoadError("%s: %d trailing payload bytes"
                            % (path, len(payload) - off))
    except (struct.error, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise LoadError("%s: malformed model payload: %s" % (path, exc))
    return Model(config=config, vocab=vocab, w_sparse=w_sparse,
                 w_dense=w_dense, cnn_params=cnn.CnnParams(banks))
