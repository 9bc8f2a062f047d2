"""Unsupervised part-of-speech tags from a collapsed Bayesian bigram HMM.

Transitions and emissions have symmetric Dirichlet priors that are
integrated out; each Gibbs step resamples one token's tag from its full
conditional given every other tag. Row K of the transition counts is the
sentence-start state. There is no end-of-sentence transition.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import AuditError, EmptyCorpus


@njit(cache=True)
def _sweep(words, starts, ends, tags, trans, emit, trans_tot, emit_tot, alpha_t, alpha_e, K, V, uniforms):
    probs = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        old = tags[i]
        prev = K if starts[i] else tags[i - 1]
        has_next = not ends[i]
        nxt = tags[i + 1] if has_next else -1
        # remove token i
        trans[prev, old] -= 1
        trans_tot[prev] -= 1
        if has_next:
            trans[old, nxt] -= 1
            trans_tot[old] -= 1
        emit[old, w] -= 1
        emit_tot[old] -= 1
        total = 0.0
        for k in range(K):
            p = (trans[prev, k] + alpha_t) * (emit[k, w] + alpha_e) / (emit_tot[k] + V * alpha_e)
            if has_next:
                same = 1.0 if (prev == k and k == nxt) else 0.0
                loop = 1.0 if prev == k else 0.0
                p *= (trans[k, nxt] + alpha_t + same) / (trans_tot[k] + K * alpha_t + loop)
            probs[k] = p
            total += p
        u = uniforms[i] * total
        new = K - 1
        acc = 0.0
        for k in range(K):
            acc += probs[k]
            if u < acc:
                new = k
                break
        tags[i] = new
        trans[prev, new] += 1
        trans_tot[prev] += 1
        if has_next:
            trans[new, nxt] += 1
            trans_tot[new] += 1
        emit[new, w] += 1
        emit_tot[new] += 1


@dataclass
class PosState:
    """Tag assignment plus the sufficient counts it implies."""

    K: int
    alpha_t: float
    alpha_e: float
    vocab: list
    word_ids: dict
    sentences: list  # lists of word ids
    words: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    tags: np.ndarray
    trans: np.ndarray = None
    emit: np.ndarray = None
    votes: np.ndarray = None
    n_samples: int = 0
    log_joints: list = field(default_factory=list)

    @property
    def V(self) -> int:
        return len(self.vocab)

    def rebuild_counts(self):
        trans = np.zeros((self.K + 1, self.K), dtype=np.int64)
        emit = np.zeros((self.K, self.V), dtype=np.int64)
        for i in range(len(self.words)):
            prev = self.K if self.starts[i] else self.tags[i - 1]
            trans[prev, self.tags[i]] += 1
            emit[self.tags[i], self.words[i]] += 1
        return trans, emit

    def tag_sequences(self) -> list[list[int]]:
        out, i = [], 0
        for sent in self.sentences:
            out.append([int(t) for t in self.tags[i:i + len(sent)]])
            i += len(sent)
        return out


def _flatten(corpus: Sequence[Sequence[str]]):
    vocab, word_ids, sentences = [], {}, []
    for sent in corpus:
        ids = []
        for tok in sent:
            if tok not in word_ids:
                word_ids[tok] = len(vocab)
                vocab.append(tok)
            ids.append(word_ids[tok])
        if ids:
            sentences.append(ids)
    if not sentences:
        raise EmptyCorpus("POS induction needs at least one nonempty sentence")
    words = np.array([w for s in sentences for w in s], dtype=np.int64)
    starts = np.zeros(len(words), dtype=np.bool_)
    ends = np.zeros(len(words), dtype=np.bool_)
    i = 0
    for s in sentences:
        starts[i] = True
        ends[i + len(s) - 1] = True
        i += len(s)
    return vocab, word_ids, sentences, words, starts, ends


def pos_init(corpus: Sequence[Sequence[str]], K: int = 10, alpha_t: float = 1.0, alpha_e: float = 0.1,
             rng=None) -> PosState:
    """Uniformly random tags for every token of ``corpus``.

    K = 1 is accepted (the sampler is then trivial), which the closed-form
    marginal check relies on.
    """
    if K < 1:
        raise ValueError("K must be positive")
    if not (alpha_t > 0 and alpha_e > 0):
        raise ValueError("Dirichlet hyperparameters must be positive")
    rng = np.random.default_rng(rng)
    vocab, word_ids, sentences, words, starts, ends = _flatten(corpus)
    tags = rng.integers(0, K, size=len(words)).astype(np.int64)
    state = PosState(K, float(alpha_t), float(alpha_e), vocab, word_ids, sentences, words, starts, ends, tags)
    state.trans, state.emit = state.rebuild_counts()
    state.votes = np.zeros((len(words), K), dtype=np.int64)
    return state


def pos_audit(state: PosState) -> None:
    trans, emit = state.rebuild_counts()
    if not (np.array_equal(trans, state.trans) and np.array_equal(emit, state.emit)):
        raise AuditError("POS counts disagree with the tag assignment")


def pos_log_joint(state: PosState) -> float:
    """Collapsed log P(tags, words) with both Dirichlet layers integrated out."""
    return log_joint_from_counts(state.trans, state.emit, state.alpha_t, state.alpha_e)


def log_joint_from_counts(trans, emit, alpha_t, alpha_e) -> float:
    K = trans.shape[1]
    V = emit.shape[1]
    total = 0.0
    for counts, alpha, dim in ((trans, alpha_t, K), (emit, alpha_e, V)):
        counts = np.asarray(counts, dtype=float)
        rows = counts.sum(axis=1)
        total += float(np.sum(gammaln(dim * alpha) - gammaln(dim * alpha + rows)))
        total += float(np.sum(gammaln(alpha + counts) - gammaln(alpha)))
    return total


def pos_gibbs_sweep(state: PosState, rng) -> float:
    """Resample every tag once, left to right; returns the log joint afterwards."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    uniforms = rng.random(len(state.words))
    trans_tot = state.trans.sum(axis=1)
    emit_tot = state.emit.sum(axis=1)
    _sweep(state.words, state.starts, state.ends, state.tags, state.trans, state.emit, trans_tot, emit_tot,
           state.alpha_t, state.alpha_e, state.K, state.V, uniforms)
    lj = pos_log_joint(state)
    state.log_joints.append(lj)
    return lj


def pos_record_sample(state: PosState) -> None:
    """Add the current assignment to the votes used by pos_decode."""
    state.votes[np.arange(len(state.tags)), state.tags] += 1
    state.n_samples += 1


def pos_decode(state: PosState) -> list[list[tuple[str, int]]]:
    """Per-token most frequent retained tag (lowest id on ties)."""
    votes = state.votes if state.n_samples else np.eye(state.K, dtype=np.int64)[state.tags]
    best = np.argmax(votes, axis=1)
    out, i = [], 0
    for sent in state.sentences:
        out.append([(state.vocab[w], int(best[i + j])) for j, w in enumerate(sent)])
        i += len(sent)
    return out


def pos_train(corpus, K=10, alpha_t=1.0, alpha_e=0.1, sweeps=200, burn_in=100, thin=5, seed=0,
              audit_every=0) -> PosState:
    """Initialize, sweep, and retain every ``thin``-th sample after burn-in."""
    rng = np.random.default_rng(seed)
    state = pos_init(corpus, K, alpha_t, alpha_e, rng)
    for it in range(1, sweeps + 1):
        pos_gibbs_sweep(state, rng)
        if audit_every and it % audit_every == 0:
            pos_audit(state)
        if it > burn_in and (it - burn_in) % thin == 0:
            pos_record_sample(state)
    if state.n_samples == 0:
        pos_record_sample(state)
    return state


@dataclass
class PosModel:
    """Posterior-mean HMM parameters, used to tag sentences outside the training corpus."""

    vocab: list
    log_trans: np.ndarray  # (K+1) x K, last row is the start state
    log_emit: np.ndarray  # K x (V+1), last column is the unseen-word column

    @classmethod
    def from_state(cls, state: PosState) -> "PosModel":
        K, V = state.K, state.V
        trans = (state.trans + state.alpha_t) / (state.trans.sum(axis=1, keepdims=True) + K * state.alpha_t)
        emit = np.empty((K, V + 1))
        denom = state.emit.sum(axis=1, keepdims=True) + (V + 1) * state.alpha_e
        emit[:, :V] = (state.emit + state.alpha_e) / denom
        emit[:, V] = state.alpha_e / denom[:, 0]
        return cls(list(state.vocab), np.log(trans), np.log(emit))

    @property
    def K(self) -> int:
        return self.log_trans.shape[1]

    def tag(self, tokens: Sequence[str]) -> list[int]:
        """Viterbi tags; words never seen in training use the unseen column."""
        ids = {w: i for i, w in enumerate(self.vocab)}
        unseen = len(self.vocab)
        obs = [ids.get(t, unseen) for t in tokens]
        if not obs:
            return []
        score = self.log_trans[self.K] + self.log_emit[:, obs[0]]
        back = []
        for o in obs[1:]:
            cand = score[:, None] + self.log_trans[:self.K]
            back.append(np.argmax(cand, axis=0))
            score = cand.max(axis=0) + self.log_emit[:, o]
        best = [int(np.argmax(score))]
        for bp in reversed(back):
            best.append(int(bp[best[-1]]))
        return best[::-1]

    def to_dict(self) -> dict:
        return {"vocab": self.vocab, "log_trans": self.log_trans.tolist(), "log_emit": self.log_emit.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PosModel":
        return cls(list(d["vocab"]), np.array(d["log_trans"]), np.array(d["log_emit"]))
