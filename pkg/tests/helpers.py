from types import SimpleNamespace

import numpy as np

from convlink.config import FeatureToggles, ModelConfig
from convlink.embeddings import EmbeddingTable
from convlink.kb import KnowledgeBase
from convlink.model import Model, prepare_mention, score_pairs
from convlink.sparse import TfIdfModel
from convlink.textproc import Document, Mention, Token


def make_table(tokens, dim=4, seed=0):
    """Random unit-vector embedding table over the given tokens."""
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(len(tokens), dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return EmbeddingTable(dim=dim, vocab={t: i for i, t in enumerate(tokens)},
                          vectors=vecs)


def write_embeddings(path, vectors):
    """Write a word2vec text file from {token: iterable} pairs."""
    items = list(vectors.items())
    dim = len(next(iter(vectors.values())))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%d %d\n" % (len(items), dim))
        for tok, vec in items:
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")
    return path


def toks(*surfaces):
    return [Token(s) for s in surfaces]


TINY_WORDS = (["w%d" % i for i in range(15)]
              + ["ones", "one", "alpha", "beta", "gamma"])   # 20 tokens


def tiny_world(seed, d=4, k=3, ell=2, toggles=None, gold="E1",
               min_kink_gap=0.0):
    """A complete random micro-instance: 20-word vocabulary, two real
    candidates plus NULL, exactly two latent queries.

    With ``min_kink_gap`` > 0, content is resampled until every encoder
    pre-activation stays at least that far from the ReLU kink and all
    topic-vector norms are healthy.
    """
    for attempt in range(300):
        rng = np.random.default_rng(seed * 1000 + attempt)
        table = make_table(TINY_WORDS, dim=d, seed=seed * 7 + attempt)
        body1 = " ".join(TINY_WORDS[int(i)]
                         for i in rng.integers(len(TINY_WORDS), size=6))
        body2 = " ".join(TINY_WORDS[int(i)]
                         for i in rng.integers(len(TINY_WORDS), size=6))
        kb = KnowledgeBase.ingest(
            [{"id": "E1", "title": "Alpha_One", "body": body1},
             {"id": "E2", "title": "Beta_One", "body": body2}],
            [{"anchor_text": "ones", "entity_id": "E1"}] * 3
            + [{"anchor_text": "ones", "entity_id": "E2"}] * 1
            + [{"anchor_text": "one", "entity_id": "E2"}] * 2)
        config = ModelConfig(d=d, k=k, ell=ell, context_window=3, doc_cap=40,
                             top_k=5, vocab_mode="interned",
                             hash_capacity=2 ** 16, init_seed=seed,
                             toggles=toggles or FeatureToggles())
        model = Model.initialize(config)
        model.w_dense = rng.normal(size=6) * 0.8
        words = [TINY_WORDS[int(i)]
                 for i in rng.integers(len(TINY_WORDS), size=9)]
        pos = int(rng.integers(0, len(words) + 1))
        doc_tokens = toks(*(words[:pos] + ["Ones"] + words[pos:]))
        mention = Mention("doc-%d" % seed, pos, pos + 1, gold)
        doc = Document(mention.doc_id, doc_tokens, [mention])
        tfidf = TfIdfModel.from_kb(kb)
        prep = prepare_mention(model, kb, table, tfidf, doc, mention)
        assert len(prep.queries) == 2
        assert len(prep.cand.candidates) == 3
        for iv, vec in enumerate(prep.fq + [v for row in prep.fe for v in row]):
            for idx, _ in vec:
                if idx not in model.w_sparse:
                    model.w_sparse[idx] = float(rng.normal() * 0.4)
        if min_kink_gap > 0.0 and model.config.toggles.use_dense:
            t = score_pairs(model, prep)
            gaps = [np.min(np.abs(s.preacts[g]))
                    for s in t.states if s is not None and not s.null_target
                    for g in s.preacts]
            norms = [np.linalg.norm(s.topics[g])
                     for s in t.states if s is not None and not s.null_target
                     for g in s.topics]
            if min(gaps) <= min_kink_gap or min(norms) <= 1e-6:
                continue
        return SimpleNamespace(model=model, kb=kb, table=table, tfidf=tfidf,
                               doc=doc, mention=mention, prep=prep)
    raise AssertionError("could not build a kink-free tiny world")


def brute_force_marginals(world):
    """Independent scorer: re-derive every (candidate, query) score from
    scratch (views, feature strings, dense features recomputed per pair,
    no caching) and normalize with plain exponentials.

    Returns (entity order, P(t), P(t, q), gold NLL or None).
    """
    import math

    from convlink import cnn
    from convlink.kb import NULL_ENTITY
    from convlink.sparse import (NULL_FEATURE, entity_feature_strings,
                                 query_feature_strings)
    from convlink.textproc import extract_target_views, extract_views

    model, kb, table, tfidf = world.model, world.kb, world.table, world.tfidf
    prep, mention = world.prep, world.mention
    cfg = model.config
    tog = cfg.toggles
    views = extract_views(world.doc.tokens, mention,
                          context_window=cfg.context_window,
                          doc_cap=cfg.doc_cap)
    doc_surf = [t.surface for t in views.document_tokens]
    entities = list(prep.cand.candidates)
    queries = list(prep.queries)
    raw = {}
    for ti, entity in enumerate(entities):
        for qi, q in enumerate(queries):
            s = 0.0
            if entity == NULL_ENTITY:
                feats = [NULL_FEATURE]
            elif tog.use_sparse:
                title_toks, body_toks = extract_target_views(
                    kb.title(entity), kb.body(entity), doc_cap=cfg.doc_cap)
                feats = entity_feature_strings(
                    kb, q, entity, tfidf, doc_surf,
                    [t.surface for t in body_toks])
            else:
                feats = []
            if tog.use_sparse:
                feats = feats + query_feature_strings(views.mention_tokens, q)
            for f in feats:
                s += model.w_sparse.get(model.vocab.index_of(f), 0.0)
            if tog.use_dense and entity != NULL_ENTITY:
                title_toks, body_toks = extract_target_views(
                    kb.title(entity), kb.body(entity), doc_cap=cfg.doc_cap)
                fc = cnn.extract_fc(model.cnn_params, views,
                                    (title_toks, body_toks), table,
                                    tog.dense_mask).values
                s += float(np.dot(model.w_dense, fc))
            raw[(ti, qi)] = s
    Z = sum(math.exp(v) for v in raw.values())
    pair = {k: math.exp(v) / Z for k, v in raw.items()}
    pt = [sum(pair[(ti, qi)] for qi in range(len(queries)))
          for ti in range(len(entities))]
    nll = None
    if mention.gold_entity in entities:
        gi = entities.index(mention.gold_entity)
        nll = -math.log(pt[gi])
    return entities, pt, pair, nll
