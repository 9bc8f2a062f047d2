import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdpccg.errors import AuditError, EmptyScene, MissingScene
from hdpccg.grounding import (
    COLOR,
    NONE,
    SPATIAL,
    Alphabets,
    Scene,
    SceneObject,
    ground_audit,
    ground_gibbs_sweep,
    ground_init,
    ground_log_joint,
    ground_train,
    grounded_lexicon,
    modality_posterior,
    presence_rates,
    resolve_instruction,
    symbol_predictive,
)
from hdpccg.harness.evaluate import eval_grounding
from hdpccg.harness.synth import grounding_fixture

from . import oracles

SMALL = Alphabets(2, 2, 2, 2)


def make_pairs(spec):
    return [([(w, 0) for w in words], Scene(act, tuple(SceneObject(c, g) for c, g in objs), sp))
            for words, act, objs, sp in spec]


THREE_PAIRS = make_pairs([
    (["push", "red"], 0, [(0, 1), (1, 0)], {(0, 1): 1, (1, 0): 0}),
    (["push", "blue"], 0, [(1, 1)], {}),
    (["red"], 1, [(0, 0)], {}),
])


def token_marginals(exact, n):
    out = [{} for _ in range(n)]
    for choice, p in exact.items():
        for i, c in enumerate(choice):
            out[i][c] = out[i].get(c, 0.0) + p
    return out


def sampled_marginals(pairs, alphabets, sweeps, seed, presence_ratio=True):
    rng = np.random.default_rng(seed)
    state = ground_init(pairs, alphabets, rng=rng, presence_ratio=presence_ratio)
    emp = [{} for _ in range(len(state.mods))]
    for _ in range(sweeps):
        ground_gibbs_sweep(state, rng)
        for i, (m, s) in enumerate(zip(state.mods, state.syms)):
            key = (int(m), None if m == NONE else int(s))
            emp[i][key] = emp[i].get(key, 0.0) + 1.0 / sweeps
    ground_audit(state)
    return emp


def exact_for(pairs, alphabets, **kw):
    return oracles.grounding_posterior([([w for w, _ in s], sc.present()) for s, sc in pairs],
                                       alphabets.sizes(), **kw)


@pytest.mark.parametrize("presence_ratio", [True, False])
def test_sampler_marginals_match_enumeration(presence_ratio):
    exact = exact_for(THREE_PAIRS, SMALL, presence_ratio=presence_ratio)
    marg = token_marginals(exact, 5)
    emp = sampled_marginals(THREE_PAIRS, SMALL, 20000, seed=1, presence_ratio=presence_ratio)
    assert max(oracles.tv_distance(a, b) for a, b in zip(marg, emp)) < 0.05


def test_log_joint_matches_enumeration_weights():
    logw = exact_for(THREE_PAIRS, SMALL, normalize=False)
    rng = np.random.default_rng(3)
    state = ground_init(THREE_PAIRS, SMALL, rng=rng)
    seen = []
    for _ in range(20):
        ground_gibbs_sweep(state, rng)
        key = tuple((int(m), None if m == NONE else int(s)) for m, s in zip(state.mods, state.syms))
        seen.append(ground_log_joint(state) - logw[key])
    # identical up to the constant the oracle drops
    assert max(seen) - min(seen) < 1e-9


def test_single_object_scene_renormalizes():
    pairs = make_pairs([(["red"], 0, [(0, 1)], {})])
    exact = token_marginals(exact_for(pairs, SMALL), 1)[0]
    # one pair: every present symbol has smoothed rate 2/3; a fresh grounded
    # option weighs 1/2 * 3/2 = 3/4 against 1 for "none"; no spatial option
    hand = {(0, 0): 0.75 / 3.25, (1, 0): 0.75 / 3.25, (3, 1): 0.75 / 3.25, (4, None): 1 / 3.25}
    assert oracles.tv_distance(exact, hand) < 1e-12
    emp = sampled_marginals(pairs, SMALL, 20000, seed=2)[0]
    assert not any(m == SPATIAL for m, _ in emp)
    assert oracles.tv_distance(emp, hand) < 0.02


def test_deterministic_color_word():
    n = 12
    pairs = []
    for word, c, g in [("red", 0, 0), ("red", 0, 1), ("blue", 1, 0), ("blue", 1, 1)]:
        pairs += make_pairs([([word], None, [(c, g)], {})] * n)
    rates = presence_rates(pairs, SMALL)
    groups = [(n, [(1, 0, 1 / rates[1, 0]), (3, g, 1 / rates[3, g]), (4, None, 1.0)]) for g in (0, 1)]
    exact = oracles.word_grounding_posterior(groups, (1,) * 5, 0.5, SMALL.sizes())
    assert exact[(1, 0)] > 0.9
    rng = np.random.default_rng(0)
    state = ground_init(pairs, SMALL, rng=rng)
    red = state.tok_word == state.word_ids["red"]
    hits = []
    for it in range(500):
        ground_gibbs_sweep(state, rng)
        if it >= 50:
            hits.append(np.mean((state.mods[red] == COLOR) & (state.syms[red] == 0)))
    assert np.mean(hits) > 0.85
    assert abs(np.mean(hits) - exact[(1, 0)]) < 0.05
    lex = {e.word: e for e in grounded_lexicon(state)}
    assert lex["red"].modality == "color" and np.argmax(lex["red"].symbols) == 0
    assert lex["blue"].modality == "color" and np.argmax(lex["blue"].symbols) == 1


def test_uniform_cooccurrence_stays_near_prior():
    alph = Alphabets(3, 3, 3, 3)
    scenes = [Scene(0, (SceneObject(0, 1), SceneObject(1, 2)), {(0, 1): 0, (1, 0): 1}),
              Scene(1, (SceneObject(2, 0), SceneObject(0, 1)), {(0, 1): 2, (1, 0): 0}),
              Scene(2, (SceneObject(1, 2), SceneObject(2, 0)), {(0, 1): 1, (1, 0): 2})]
    pairs = [([("the", 0)], s) for s in scenes]
    exact = exact_for(pairs, alph)
    post = np.zeros(5)
    for choice, p in exact.items():
        counts = np.zeros(5)
        for m, _ in choice:
            counts[m] += 1
        post += p * (counts + 1) / (len(choice) + 5)
    assert 0.5 * np.abs(post - 0.2).sum() < 0.1
    rng = np.random.default_rng(4)
    state = ground_init(pairs, alph, rng=rng)
    mean = np.zeros(5)
    for _ in range(20000):
        ground_gibbs_sweep(state, rng)
        mean += modality_posterior(state, 0) / 20000
    assert 0.5 * np.abs(mean - 0.2).sum() < 0.1
    assert 0.5 * np.abs(mean - post).sum() < 0.02


def test_twelve_word_fixture():
    pairs, gold, alph = grounding_fixture(200, seed=0)
    state = ground_train(pairs, alph, sweeps=500, seed=0, audit_every=100)
    lex = grounded_lexicon(state)
    assert [e.word for e in lex] == sorted(gold)
    predicted = {e.word: e.modality for e in lex}
    assert eval_grounding(predicted, gold)["accuracy"] >= 0.9
    for e in lex:
        assert sum(e.symbols) == pytest.approx(1.0, abs=1e-9)
        assert sum(e.modality_posterior) == pytest.approx(1.0, abs=1e-9)


def test_untrained_and_rare_words():
    pairs, gold, alph = grounding_fixture(60, seed=1)
    pairs = pairs + make_pairs([(["zebra"], 0, [(0, 0)], {})])
    state = ground_init(pairs, alph, rng=0)
    lex = grounded_lexicon(state)
    assert len(lex) == len(gold) + 1
    assert all(e.confidence < 0.6 for e in lex)
    trained = {e.word: e for e in grounded_lexicon(ground_train(pairs, alph, sweeps=200, seed=1))}
    rare = trained["zebra"].confidence
    assert rare < 0.5
    assert rare < np.median([trained[w].confidence for w in gold])


def test_seeded_trajectories_match():
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(8)
        state = ground_init(THREE_PAIRS, SMALL, rng=rng)
        runs.append([ground_gibbs_sweep(state, rng) for _ in range(30)] + state.mods.tolist() + state.syms.tolist())
    assert runs[0] == runs[1]


def test_init_errors_and_audit():
    with pytest.raises(MissingScene):
        ground_init([([("a", 0)], None)], SMALL)
    with pytest.raises(EmptyScene):
        ground_init([([("a", 0)], Scene(0, (), {}))], SMALL)
    with pytest.raises(EmptyScene):
        ground_init([([("a", 0)], Scene(5, (SceneObject(0, 0),), {}))], SMALL)
    state = ground_init(THREE_PAIRS, SMALL, rng=0)
    ground_audit(state)
    i = int(np.flatnonzero(state.mods == NONE)[0]) if np.any(state.mods == NONE) else 0
    state.mods[i] = NONE
    state.syms[i] = 1
    with pytest.raises(AuditError):
        ground_audit(state)


def test_tag_conditioned_prior():
    pairs = [([("push", 0), ("red", 1)], Scene(0, (SceneObject(0, 0),), {}))]
    prior = {0: [20, 1, 1, 1, 1], "default": [1, 1, 1, 1, 20]}
    state = ground_init(pairs, SMALL, phi_prior=prior, rng=0)
    assert state.phi[state.word_ids["push"]].tolist() == [20, 1, 1, 1, 1]
    assert state.phi[state.word_ids["red"]].tolist() == [1, 1, 1, 1, 20]


def test_scene_record_round_trip():
    scene = Scene(1, (SceneObject(0, 1, (0.5, 0.25)), SceneObject(1, 0)), {(0, 1): 1, (1, 0): 0})
    assert Scene.from_record(scene.to_record()) == scene


# -- resolution -------------------------------------------------------------


@pytest.fixture(scope="module")
def trained():
    pairs, gold, alph = grounding_fixture(200, seed=0)
    return ground_train(pairs, alph, sweeps=300, seed=0)


def test_resolve_fixture(trained):
    # push = action 0, red = color 0, box = geometry 0, cup = geometry 1, near = spatial 0
    scene = Scene(0, (SceneObject(0, 0), SceneObject(2, 1)), {(0, 1): 0, (1, 0): 1})
    out = resolve_instruction(["push", "red", "box", "near", "cup"], scene, trained)
    assert out == {"action": 0, "referent": 0, "referent_color": 0, "landmark": 1, "ambiguous": []}
    assert resolve_instruction(["push", "red", "box", "near", "cup"], scene, trained) == out


def test_resolve_without_spatial_word(trained):
    scene = Scene(0, (SceneObject(1, 2), SceneObject(0, 0)), {(0, 1): 0, (1, 0): 1})
    out = resolve_instruction(["push", "red", "box"], scene, trained)
    assert out["landmark"] is None and out["referent"] == 1


def test_resolve_identical_objects_tie(trained):
    scene = Scene(0, (SceneObject(0, 0), SceneObject(0, 0)), {(0, 1): 0, (1, 0): 0})
    out = resolve_instruction(["push", "red", "box"], scene, trained)
    assert out["referent"] == 0
    assert "referent" in out["ambiguous"]


def test_resolve_unknown_words_give_empty_slots(trained):
    scene = Scene(0, (SceneObject(0, 0),), {})
    out = resolve_instruction(["xyzzy"], scene, trained)
    assert out == {"action": None, "referent": None, "referent_color": None, "landmark": None, "ambiguous": []}


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=3),
                          st.integers(0, 1), st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)),
                                                      min_size=1, max_size=3)),
                min_size=1, max_size=4),
       st.integers(0, 10**6))
def test_assignments_stay_in_scene(spec, seed):
    pairs = make_pairs([(w, a, objs, {(i, j): (i + j) % 2 for i in range(len(objs)) for j in range(len(objs)) if i != j})
                        for w, a, objs in spec])
    rng = np.random.default_rng(seed)
    state = ground_init(pairs, SMALL, rng=rng)
    for _ in range(3):
        assert math.isfinite(ground_gibbs_sweep(state, rng))
        ground_audit(state)
    for wid in range(len(state.vocab)):
        assert modality_posterior(state, wid).sum() == pytest.approx(1.0)
        for m in range(4):
            assert symbol_predictive(state, wid, m).sum() == pytest.approx(1.0)


def test_resolve_from_lexicon_records(trained):
    from hdpccg.grounding import GroundedLexiconEntry

    lex = [GroundedLexiconEntry.from_record(e.to_record()) for e in grounded_lexicon(trained)]
    scene = Scene(None, (SceneObject(0, 0), SceneObject(2, 1)), {(0, 1): 0, (1, 0): 1})
    sentence = ["pull", "red", "box", "near", "cup"]
    assert resolve_instruction(sentence, scene, lexicon=lex) == resolve_instruction(sentence, scene, trained)
    assert resolve_instruction(sentence, scene, lexicon=lex)["action"] == 1
