import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdpccg.errors import AuditError, EmptyCorpus
from hdpccg.harness.evaluate import eval_tags
from hdpccg.harness.synth import hmm_corpus
from hdpccg.pos import (
    PosModel,
    log_joint_from_counts,
    pos_audit,
    pos_decode,
    pos_gibbs_sweep,
    pos_init,
    pos_log_joint,
    pos_record_sample,
    pos_train,
)

from . import oracles

TOY = [["a", "b", "a"]]


def enumerate_gibbs(corpus, K, sweeps, seed):
    rng = np.random.default_rng(seed)
    state = pos_init(corpus, K=K, rng=rng)
    counts = {}
    for _ in range(sweeps):
        pos_gibbs_sweep(state, rng)
        key = tuple(int(t) for t in state.tags)
        counts[key] = counts.get(key, 0) + 1
    return oracles.normalize(counts), state


def test_gibbs_matches_enumeration_on_three_tokens():
    exact = oracles.hmm_posterior(TOY, 2)
    assert len(exact) == 8
    emp, state = enumerate_gibbs(TOY, 2, 30000, seed=1)
    pos_audit(state)
    assert oracles.tv_distance(emp, exact) < 0.05


def test_gibbs_matches_enumeration_across_sentences():
    corpus = [["a", "b"], ["b", "a", "a"]]
    exact = oracles.hmm_posterior(corpus, 2)
    emp, _ = enumerate_gibbs(corpus, 2, 30000, seed=2)
    assert oracles.tv_distance(emp, exact) < 0.05


def test_log_joint_matches_oracle():
    corpus = [["x", "y", "x", "z"], ["y", "z"]]
    state = pos_init(corpus, K=3, alpha_t=0.7, alpha_e=0.2, rng=4)
    words = [[state.word_ids[w] for w in s] for s in corpus]
    expected = oracles.hmm_log_joint(words, state.tag_sequences(), 3, 3, 0.7, 0.2)
    assert pos_log_joint(state) == pytest.approx(expected, rel=1e-12)


def test_single_tag_closed_form():
    corpus = [["a", "b", "a", "c"], ["b", "b"]]
    state = pos_init(corpus, K=1, rng=0)
    pos_gibbs_sweep(state, np.random.default_rng(0))
    assert set(state.tags.tolist()) == {0}
    # K = 1: transitions contribute nothing; emissions are one DM over the word counts
    counts = [2, 3, 1]
    n, V, a = 6, 3, 0.1
    closed = math.lgamma(V * a) - math.lgamma(V * a + n) + sum(math.lgamma(a + c) - math.lgamma(a) for c in counts)
    assert pos_log_joint(state) == pytest.approx(closed, rel=1e-9)


def test_audit_and_transition_totals():
    corpus = [["a", "b", "c"], ["c", "a"], ["b"]]
    state = pos_init(corpus, K=3, rng=0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        pos_gibbs_sweep(state, rng)
        pos_audit(state)
        assert state.trans.sum() == 6
        assert state.trans[3].sum() == 3
    state.emit[0, 0] += 1
    with pytest.raises(AuditError):
        pos_audit(state)


def test_seeded_sweeps_are_identical():
    runs = []
    for _ in range(2):
        state = pos_init(TOY * 3, K=3, rng=5)
        rng = np.random.default_rng(5)
        runs.append([pos_gibbs_sweep(state, rng) for _ in range(10)] + state.tags.tolist())
    assert runs[0] == runs[1]


def test_decode_rules():
    state = pos_init([["a", "b"]], K=4, rng=0)
    state.tags[:] = [2, 1]
    pos_record_sample(state)
    assert pos_decode(state) == [[("a", 2), ("b", 1)]]
    state.votes[:] = 0
    state.votes[0, [1, 3]] = 5
    state.votes[1, [0, 2]] = 1
    assert pos_decode(state) == [[("a", 1), ("b", 0)]]


def test_errors():
    with pytest.raises(EmptyCorpus):
        pos_init([[], []], K=2)
    with pytest.raises(ValueError):
        pos_init(TOY, K=0)


def test_synthetic_many_to_one():
    sentences, gold = hmm_corpus(K=5, V=50, n_tokens=2000, seed=0)
    state = pos_train(sentences, K=5, sweeps=200, burn_in=100, thin=5, seed=0)
    pred = [[t for _, t in s] for s in pos_decode(state)]
    assert eval_tags(pred, gold)["many_to_one"] >= 0.8


def test_running_max_of_log_joint_rises():
    sentences, _ = hmm_corpus(K=5, V=50, n_tokens=600, seed=3)
    rising = 0
    for seed in range(10):
        state = pos_init(sentences, K=5, rng=seed)
        rng = np.random.default_rng(seed)
        lj = [pos_gibbs_sweep(state, rng) for _ in range(50)]
        assert all(math.isfinite(v) for v in lj)
        rising += max(lj[25:]) >= max(lj[:25]) or max(lj) > lj[0]
    assert rising >= 9


def test_model_tags_training_sentences_consistently():
    sentences, gold = hmm_corpus(K=3, V=12, n_tokens=400, seed=2)
    state = pos_train(sentences, K=3, sweeps=60, burn_in=30, thin=5, seed=1)
    model = PosModel.from_state(state)
    again = PosModel.from_dict(model.to_dict())
    tagged = [again.tag(s) for s in sentences]
    assert eval_tags(tagged, gold)["many_to_one"] >= 0.7
    assert model.tag(["never-seen", sentences[0][0]])
    assert model.tag([]) == []


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=5), min_size=1, max_size=4),
       st.integers(1, 4), st.integers(0, 10**6))
def test_counts_stay_consistent(corpus, K, seed):
    state = pos_init(corpus, K=K, rng=seed)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        lj = pos_gibbs_sweep(state, rng)
        pos_audit(state)
        assert math.isfinite(lj)
        assert lj == pytest.approx(log_joint_from_counts(state.trans, state.emit, 1.0, 0.1))
    assert state.trans.sum() == sum(len(s) for s in corpus)
