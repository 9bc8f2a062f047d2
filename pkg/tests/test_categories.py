import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdpccg.categories import (
    APPLICATION,
    BWD_APP,
    COMPOSITION,
    CROSSED,
    DEFAULT_RULES,
    FWD_APP,
    FWD_COMP,
    GENERALIZED,
    NP,
    RAISING,
    N,
    S,
    Combinator,
    Kind,
    RuleConfig,
    atom,
    bwd,
    bwd_raise,
    combine,
    enumerate_categories,
    enumerate_expansions,
    fwd,
    fwd_raise,
    parse_category,
    parse_combinator,
    print_category,
)
from hdpccg.errors import CategorySyntaxError, ConfigError, LimitError

from . import oracles

ALL_BINARY = APPLICATION | COMPOSITION | CROSSED
FULL = RuleConfig(kinds=ALL_BINARY | RAISING | GENERALIZED, max_depth=4, max_arity=3)


def test_parse_functor():
    assert parse_category("NP/N") is fwd(NP, N)


def test_parse_atom():
    assert parse_category("S") is S


def test_parse_nested():
    assert parse_category("(S\\NP)/NP") is fwd(bwd(S, NP), NP)


def test_slashes_associate_left():
    assert parse_category("S\\NP/NP") is fwd(bwd(S, NP), NP)
    assert parse_category("S/NP/N") is fwd(fwd(S, NP), N)


def test_print_examples():
    assert print_category(fwd(NP, N)) == "NP/N"
    assert print_category(N) == "N"
    assert print_category(fwd(bwd(S, NP), NP)) == "(S\\NP)/NP"
    assert print_category(fwd(fwd(S, NP), N)) == "S/NP/N"
    assert print_category(fwd(S, fwd(S, NP))) == "S/(S/NP)"


@pytest.mark.parametrize("text", ["((S\\NP))/(NP)", " ( S\\NP ) / NP ", "S\\NP/NP"])
def test_redundant_parentheses_normalise(text):
    assert print_category(parse_category(text)) == "(S\\NP)/NP"


@pytest.mark.parametrize("text", ["", "S/(NP", "S)", "S//NP", "/NP", "S/", "Q/NP", "S+NP", "()"])
def test_bad_notation(text):
    with pytest.raises(CategorySyntaxError):
        parse_category(text)


def test_limits_enforced_on_parse():
    narrow = RuleConfig(kinds=APPLICATION, max_depth=1, max_arity=1)
    assert parse_category("NP/N", narrow) is fwd(NP, N)
    with pytest.raises(LimitError):
        parse_category("(S\\NP)/NP", narrow)
    wide = RuleConfig(kinds=APPLICATION, max_depth=5, max_arity=2)
    with pytest.raises(LimitError):
        parse_category("S/NP/NP/NP", wide)


def test_config_extensible_atoms():
    cfg = RuleConfig(kinds=APPLICATION, atoms=("S", "N", "NP", "PP"))
    assert parse_category("S/PP", cfg).arg is atom("PP")
    with pytest.raises(CategorySyntaxError):
        parse_category("S/PP")


def test_round_trip_1000_random_categories():
    rng = np.random.default_rng(7)
    atoms = ["S", "N", "NP", "Conj"]
    done = 0
    while done < 1000:
        tup = oracles.random_category(rng, atoms, 4)
        if not oracles.fits(tup, 4, 3):
            continue
        done += 1
        cat = parse_category(oracles.show(tup), FULL)
        printed = print_category(cat)
        assert parse_category(printed, FULL) is cat
        assert oracles.read(printed) == tup
        assert print_category(parse_category(printed, FULL)) == printed


@st.composite
def category_text(draw, d=3):
    if d == 0 or draw(st.booleans()):
        return draw(st.sampled_from(["S", "N", "NP", "Conj"]))
    left = draw(category_text(d - 1))
    right = draw(category_text(d - 1))
    slash = draw(st.sampled_from(["/", "\\"]))
    return f"({left}){slash}({right})"


@given(category_text())
@settings(max_examples=300, deadline=None)
def test_print_parse_print_is_stable(text):
    once = print_category(parse_category(text, FULL))
    assert print_category(parse_category(once, FULL)) == once


def test_interning_gives_identity():
    assert parse_category("(S\\NP)/NP") is parse_category("(S\\NP)/NP")
    assert fwd(NP, N) == parse_category("NP/N")


# -- combine ------------------------------------------------------------------


def test_forward_application():
    assert combine(FWD_APP, fwd(NP, N), N) is NP
    assert combine(FWD_APP, fwd(NP, N), NP) is None


def test_composition_and_raising():
    assert combine(FWD_COMP, fwd(S, NP), fwd(NP, N)) is fwd(S, N)
    assert combine(fwd_raise(S), NP) is fwd(S, bwd(S, NP))


def test_backward_mirrors():
    assert combine(BWD_APP, NP, bwd(S, NP)) is S
    assert combine(Combinator(Kind.BWD_COMP), bwd(NP, N), bwd(S, NP)) is bwd(S, N)
    assert combine(bwd_raise(S), NP) is bwd(S, fwd(S, NP))


def test_crossed_and_generalized():
    assert combine(Combinator(Kind.FWD_XCOMP), fwd(S, NP), bwd(NP, N)) is bwd(S, N)
    assert combine(Combinator(Kind.BWD_XCOMP), fwd(NP, N), bwd(S, NP)) is fwd(S, N)
    assert combine(Combinator(Kind.FWD_COMP2), fwd(S, NP), fwd(fwd(NP, N), N)) is fwd(fwd(S, N), N)
    assert combine(Combinator(Kind.BWD_COMP2), bwd(bwd(NP, N), N), bwd(S, NP)) is bwd(bwd(S, N), N)


def test_combine_limit_error():
    narrow = RuleConfig(kinds=APPLICATION | RAISING, max_depth=1, max_arity=3)
    with pytest.raises(LimitError):
        combine(fwd_raise(S), NP, None, narrow)
    assert combine(FWD_APP, fwd(NP, N), N, narrow) is NP


def test_combine_arity_checks():
    with pytest.raises(ValueError):
        combine(FWD_APP, fwd(NP, N))
    with pytest.raises(ValueError):
        combine(fwd_raise(S), NP, N)
    with pytest.raises(ValueError):
        combine(Combinator(Kind.LEX), NP)


def test_combine_is_pure():
    pairs = [(fwd(NP, N), N), (NP, bwd(S, NP))]
    first = [combine(FWD_APP, l, r) for l, r in pairs]
    for _ in range(3):
        assert [combine(FWD_APP, l, r) for l, r in pairs] == first


def test_combine_agrees_with_independent_matcher():
    rng = np.random.default_rng(11)
    atoms = ["S", "N", "NP"]
    config = RuleConfig(kinds=ALL_BINARY | RAISING, max_depth=4, max_arity=3)
    agree = 0
    for _ in range(1000):
        lt = oracles.random_category(rng, atoms, 2)
        # bias right operands towards combinable shapes
        rt = oracles.random_category(rng, atoms, 2) if rng.random() < 0.5 else (
            lt[2] if not isinstance(lt, str) else oracles.random_category(rng, atoms, 2))
        left, right = parse_category(oracles.show(lt), config), parse_category(oracles.show(rt), config)
        for kind in oracles.BINARY:
            expected = oracles.match(kind, lt, rt)
            try:
                got = combine(Combinator(Kind.from_label(kind)), left, right, config)
            except LimitError:
                assert expected is not None and not oracles.fits(expected, 4, 3)
                continue
            if expected is None or not oracles.fits(expected, 4, 3):
                assert got is None
            else:
                assert oracles.read(got.text) == expected
                agree += 1
    assert agree > 100


def test_raise_identity():
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = parse_category(oracles.show(oracles.random_category(rng, ["S", "N", "NP"], 1)))
        y = parse_category(oracles.show(oracles.random_category(rng, ["S", "N", "NP"], 1)))
        raised = combine(fwd_raise(x), y, None, FULL)
        assert combine(FWD_APP, raised, bwd(x, y), FULL) is x
        lowered = combine(bwd_raise(x), y, None, FULL)
        assert combine(BWD_APP, fwd(x, y), lowered, FULL) is x


def test_parse_combinator_labels():
    assert parse_combinator("FwdApp") == FWD_APP
    assert parse_combinator("FwdRaise[S]") == fwd_raise(S)
    assert fwd_raise(S).label == "FwdRaise[S]"


# -- rule config --------------------------------------------------------------


def test_rule_config_validation():
    with pytest.raises(ConfigError):
        RuleConfig(kinds=RAISING, raise_targets=())
    with pytest.raises(ConfigError):
        RuleConfig(kinds={Kind.LEX})
    with pytest.raises(ConfigError):
        RuleConfig(kinds=RAISING, raise_targets=(S,), raisable=(NP, fwd(S, bwd(S, NP))))


def test_rule_config_from_names_round_trip():
    cfg = RuleConfig.from_names(kinds=["FwdApp", "BwdApp", "FwdRaise"], raise_targets=["S"])
    assert RuleConfig.from_names(**cfg.to_names()) == cfg
    assert [c.label for c in cfg.combinators()] == ["FwdApp", "BwdApp", "FwdRaise[S]"]


def test_default_rules_exclude_crossed_and_generalized():
    assert not (DEFAULT_RULES.kinds & (CROSSED | GENERALIZED))


# -- expansions ---------------------------------------------------------------


def test_expansion_example():
    cfg = RuleConfig(kinds={Kind.FWD_APP})
    assert enumerate_expansions(NP, cfg, {N}) == [(FWD_APP, N, fwd(NP, N), N)]


def test_expansion_empty_pool():
    assert enumerate_expansions(S, FULL, set()) == []


def _brute_force_inversions(parent, rules, pool):
    found = set()
    for rule in rules.binary_combinators():
        for l, r in itertools.product(pool, repeat=2):
            try:
                out = combine(rule, l, r, rules)
            except LimitError:
                continue
            if out is parent:
                found.add((rule, l, r))
    return found


def _check_inversion(parent, rules, arg_pool, child_pool):
    got = enumerate_expansions(parent, rules, arg_pool)
    for rule, y, l, r in got:
        assert combine(rule, l, r, rules) is parent
    emitted = {(rule, l, r) for rule, y, l, r in got if r is not None}
    brute = _brute_force_inversions(parent, rules, child_pool)
    from hdpccg.categories import argument_of

    missed = {t for t in brute if argument_of(t[0], t[1], t[2]) in arg_pool} - emitted
    assert not missed
    keys = [(rule.sort_key, y.text) for rule, y, _, _ in got]
    assert keys == sorted(keys)
    return got


def _child_pool(parent, pool):
    # children may lie outside the argument pool: every category of depth <= 1
    # plus every one-slash functor over the pool, the atoms and the parent
    parts = set(pool) | {S, N, NP, parent}
    out = set(enumerate_categories(["S", "N", "NP"], 1)) | parts
    for a, b in itertools.product(parts, repeat=2):
        out.add(fwd(a, b))
        out.add(bwd(a, b))
    return sorted(out, key=lambda c: c.text)


def test_expansion_exhaustive_oracle_for_s_over_n():
    rules = RuleConfig(kinds=APPLICATION | COMPOSITION)
    pool = [fwd(NP, N), NP, N, S, fwd(S, NP)]
    parent = fwd(S, N)
    got = _check_inversion(parent, rules, pool, _child_pool(parent, pool))
    assert (FWD_COMP, NP, fwd(S, NP), fwd(NP, N)) in got


def test_expansion_inversion_zero_misses_random_pools():
    rng = np.random.default_rng(5)
    rules = RuleConfig(kinds=ALL_BINARY, max_depth=3, max_arity=3)
    universe = enumerate_categories(["S", "N", "NP"], 1)
    for _ in range(25):
        idx = rng.choice(len(universe), size=8, replace=False)
        pool = [universe[i] for i in idx]
        parent = universe[rng.integers(len(universe))]
        _check_inversion(parent, rules, pool, _child_pool(parent, pool))


def test_expansion_respects_limits():
    rules = RuleConfig(kinds=APPLICATION, max_depth=1, max_arity=1)
    got = enumerate_expansions(fwd(S, NP), rules, {N, NP})
    assert got == []
    got = enumerate_expansions(S, rules, {fwd(N, N), NP})
    assert [(r.label, y.text) for r, y, _, _ in got] == [("FwdApp", "NP"), ("BwdApp", "NP")]


def test_expansion_raise():
    rules = RuleConfig(kinds=APPLICATION | RAISING)
    raised = fwd(S, bwd(S, NP))
    got = enumerate_expansions(raised, rules, {NP, N})
    assert (fwd_raise(S), NP, NP, None) in got
    assert all(combine(r, l, rt, rules) is raised for r, y, l, rt in got)


def test_enumerate_categories_counts():
    cats = enumerate_categories(["S", "N", "NP"], 2)
    assert len(cats) == 3 + 18 + 864
    assert len(set(cats)) == len(cats)
