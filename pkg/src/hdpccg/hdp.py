"""Nonparametric Bayesian induction of CCG expansions.

Generative story, top down from a root fixed to S: every node with category
z picks a kind (lexical leaf or one of the enabled combinators) from a
Dirichlet-multinomial specific to z. A leaf emits a tag from a second
Dirichlet-multinomial specific to z. A binary combinator draws its argument
y from a DP specific to (z, kind) whose base measure is itself a DP draw
shared by every restaurant (a two-level hierarchical DP over categories
with base G0). Given (z, kind, y) the children are determined. Type raising
is a unary kind whose argument is fixed by the parent.

All random measures are integrated out. The DP levels are kept as explicit
Chinese-restaurant seatings: per restaurant a list of table sizes per dish,
and at the top level the number of tables serving each dish.

Inference resamples one sentence at a time with a Metropolis-Hastings step:
the sentence's events are removed, a derivation is proposed from a chart
scored with the predictive probabilities of the remaining state, its events
are added back while sampling tables, and the move is accepted with the
ratio of exact sequential predictive probabilities over proposal weights.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .categories import (
    LEX,
    S,
    Category,
    Combinator,
    Kind,
    RuleConfig,
    argument_of,
    atom,
    enumerate_expansions,
    parse_category,
    parse_combinator,
    within_limits,
)
from .chart import CompiledChart, Derivation, Lexicon, build_chart, compile_chart
from .errors import AuditError, ConfigError, EmptyCorpus, NoParse

CHECKPOINT_VERSION = 1
NEG_INF = float("-inf")

# -- base distribution ------------------------------------------------------


@dataclass(frozen=True)
class BaseDistribution:
    """G0 over categories: an atom with probability 1 - p_slash (uniform over
    atoms), otherwise a slash direction, a result and an argument drawn
    recursively."""

    atoms: tuple = ("S", "N", "NP")
    p_slash: float = 0.4
    p_forward: float = 0.5

    def __post_init__(self):
        if not 0 <= self.p_slash < 1:
            raise ConfigError("p_slash must lie in [0, 1)")
        if not 0 < self.p_forward < 1:
            raise ConfigError("p_forward must lie in (0, 1)")
        if not self.atoms:
            raise ConfigError("base distribution needs at least one atom")


@lru_cache(maxsize=None)
def _g0_log(cat: Category, base: BaseDistribution) -> float:
    if cat.atom is not None:
        if cat.atom not in base.atoms:
            return NEG_INF
        return math.log1p(-base.p_slash) - math.log(len(base.atoms))
    if base.p_slash == 0:
        return NEG_INF
    direction = base.p_forward if cat.slash == "/" else 1.0 - base.p_forward
    return (math.log(base.p_slash) + math.log(direction)
            + _g0_log(cat.result, base) + _g0_log(cat.arg, base))


def g0_logprob(cat: Category, base: BaseDistribution) -> float:
    return _g0_log(cat, base)


def g0_prob(cat: Category, base: BaseDistribution) -> float:
    return math.exp(_g0_log(cat, base))


def g0_mass_within_depth(base: BaseDistribution, depth: int) -> float:
    """Total G0 mass of categories of depth <= ``depth``.

    q_0 = 1 - p_slash and q_d = (1 - p_slash) + p_slash * q_{d-1}^2.
    """
    q = 1.0 - base.p_slash
    for _ in range(depth):
        q = (1.0 - base.p_slash) + base.p_slash * q * q
    return q


def dp_predictive(count: float, total: float, alpha: float, base_prob: float) -> float:
    """Chinese-restaurant predictive (count + alpha * base) / (total + alpha)."""
    return (count + alpha * base_prob) / (total + alpha)


# -- parameters -------------------------------------------------------------


@dataclass
class HdpParams:
    alpha_dp: float = 1.0
    gamma: float = 1.0
    kind_prior: float = 1.0
    emission_prior: float = 0.1
    p_slash: float = 0.4
    n_tags: int = 10
    resample_hyper: bool = False
    pool_refresh: int = 10
    fixed_pool: bool = False

    def validate(self):
        for name in ("alpha_dp", "gamma", "kind_prior", "emission_prior"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_tags < 1:
            raise ConfigError("n_tags must be positive")
        if self.pool_refresh < 1:
            raise ConfigError("pool_refresh must be positive")


# -- seating ----------------------------------------------------------------


class Restaurant:
    """Customers of one (parent, kind) DP: table sizes per dish."""

    __slots__ = ("n", "tables", "counts", "n_tables")

    def __init__(self):
        self.n = 0
        self.tables: dict[Category, list[int]] = {}
        self.counts: dict[Category, int] = {}
        self.n_tables = 0


def _events(d: Derivation, kind_index: dict) -> list[tuple]:
    """Pre-order events (z, kind index, argument or tag) of a derivation."""
    out = []
    for node in d.nodes():
        if node.rule.kind == Kind.LEX:
            out.append((node.cat, 0, int(node.token)))
        else:
            kids = node.children
            if node.rule.kind.is_raise:
                y = kids[0].cat
            else:
                y = argument_of(node.rule, kids[0].cat, kids[1].cat)
            out.append((node.cat, kind_index[node.rule], y))
    return out


class _Arrays:
    """Count arrays mirroring the seating state for vectorised scoring.

    Category ids are global and only ever grow; rule ids index the
    (parent, combinator, argument) keys of the compiled chart templates.
    """

    def __init__(self, n_kinds: int, n_tags: int):
        self.cat_ids: dict[Category, int] = {}
        self.cats: list[Category] = []
        cap = 64
        self.kind_n = np.zeros((cap, n_kinds))
        self.kind_tot = np.zeros(cap)
        self.leaf_n = np.zeros((cap, n_tags))
        self.leaf_tot = np.zeros(cap)
        self.top_m = np.zeros(cap)
        self.g0 = np.zeros(cap)
        self.rule_ids: dict[tuple, int] = {}
        self.rule_parent = np.zeros(0, dtype=np.int64)
        self.rule_kind = np.zeros(0, dtype=np.int64)
        self.rule_arg = np.zeros(0, dtype=np.int64)
        self.rule_binary = np.zeros(0, dtype=bool)
        self.rule_ny = np.zeros(0)
        self.rule_rest = np.zeros(0, dtype=np.int64)
        self.rest_ids: dict[tuple, int] = {}
        self.rest_n = np.zeros(0)
        self.n_rules_synced = 0


class HdpState:
    def __init__(self, corpus: Sequence[Sequence[int]], rules: RuleConfig, params: HdpParams,
                 base: BaseDistribution | None = None):
        params.validate()
        self.rules = rules
        self.params = params
        self.base = base or BaseDistribution(tuple(a for a in rules.atoms if a != "Conj") or rules.atoms,
                                             params.p_slash)
        self.kinds: list[Combinator] = [LEX] + list(rules.combinators())
        self.kind_index = {c: i for i, c in enumerate(self.kinds)}
        self.binary = [c.kind.is_binary for c in self.kinds]
        self.corpus = [tuple(int(t) for t in sent) for sent in corpus]
        self.kind_counts: dict[Category, list[int]] = {}
        self.kind_tot: dict[Category, int] = {}
        self.leaf_counts: dict[Category, list[int]] = {}
        self.leaf_tot: dict[Category, int] = {}
        self.rest: dict[tuple, Restaurant] = {}
        self.top: dict[Category, int] = {}
        self.top_total = 0
        self.derivations: list[Derivation | None] = [None] * len(self.corpus)
        self.escaped: list[bool] = [False] * len(self.corpus)
        self.iteration = 0
        self.pool: frozenset = frozenset()
        self.pool_version = 0
        self._templates: dict = {}
        self.arrays = _Arrays(len(self.kinds), params.n_tags)
        self.accepted = 0
        self.proposed = 0
        self.history: list[float] = []

    # -- category registry ----------------------------------------------

    def _cid(self, cat: Category) -> int:
        a = self.arrays
        i = a.cat_ids.get(cat)
        if i is not None:
            return i
        i = len(a.cats)
        a.cat_ids[cat] = i
        a.cats.append(cat)
        if i >= len(a.kind_tot):
            cap = 2 * len(a.kind_tot)
            for name in ("kind_n", "leaf_n"):
                old = getattr(a, name)
                new = np.zeros((cap, old.shape[1]))
                new[:len(old)] = old
                setattr(a, name, new)
            for name in ("kind_tot", "leaf_tot", "top_m", "g0"):
                old = getattr(a, name)
                new = np.zeros(cap)
                new[:len(old)] = old
                setattr(a, name, new)
        kc = self.kind_counts.get(cat)
        if kc is not None:
            a.kind_n[i] = kc
            a.kind_tot[i] = self.kind_tot[cat]
        lc = self.leaf_counts.get(cat)
        if lc is not None:
            a.leaf_n[i] = lc
            a.leaf_tot[i] = self.leaf_tot[cat]
        a.top_m[i] = self.top.get(cat, 0)
        a.g0[i] = g0_prob(cat, self.base)
        return i

    def _sync_rules(self):
        """Extend rule arrays for rule ids created since the last call."""
        a = self.arrays
        start = a.n_rules_synced
        if start == len(a.rule_ids):
            return
        keys = list(a.rule_ids)[start:]
        parent, kind, arg, binary, ny, rest = [], [], [], [], [], []
        for (z, rule, y) in keys:
            k = self.kind_index[rule]
            parent.append(self._cid(z))
            kind.append(k)
            arg.append(self._cid(y))
            binary.append(self.binary[k])
            r = self.rest.get((z, k))
            ny.append(r.counts.get(y, 0) if r else 0)
            rid = a.rest_ids.get((z, k))
            if rid is None:
                rid = a.rest_ids[(z, k)] = len(a.rest_ids)
            rest.append(rid)
        a.rule_parent = np.concatenate([a.rule_parent, np.array(parent, dtype=np.int64)])
        a.rule_kind = np.concatenate([a.rule_kind, np.array(kind, dtype=np.int64)])
        a.rule_arg = np.concatenate([a.rule_arg, np.array(arg, dtype=np.int64)])
        a.rule_binary = np.concatenate([a.rule_binary, np.array(binary, dtype=bool)])
        a.rule_ny = np.concatenate([a.rule_ny, np.array(ny, dtype=float)])
        a.rule_rest = np.concatenate([a.rule_rest, np.array(rest, dtype=np.int64)])
        if len(a.rest_ids) > len(a.rest_n):
            new = np.zeros(len(a.rest_ids))
            new[:len(a.rest_n)] = a.rest_n
            for (z, k), rid in a.rest_ids.items():
                if rid >= len(a.rest_n):
                    r = self.rest.get((z, k))
                    new[rid] = r.n if r else 0
            a.rest_n = new
        a.n_rules_synced = len(a.rule_ids)

    # -- count updates ----------------------------------------------------

    def _kind_delta(self, z: Category, k: int, d: int):
        kc = self.kind_counts.get(z)
        if kc is None:
            kc = self.kind_counts[z] = [0] * len(self.kinds)
            self.kind_tot[z] = 0
        kc[k] += d
        self.kind_tot[z] += d
        i = self.arrays.cat_ids.get(z)
        if i is not None:
            self.arrays.kind_n[i, k] += d
            self.arrays.kind_tot[i] += d

    def _leaf_delta(self, z: Category, tag: int, d: int):
        lc = self.leaf_counts.get(z)
        if lc is None:
            lc = self.leaf_counts[z] = [0] * self.params.n_tags
            self.leaf_tot[z] = 0
        lc[tag] += d
        self.leaf_tot[z] += d
        i = self.arrays.cat_ids.get(z)
        if i is not None:
            self.arrays.leaf_n[i, tag] += d
            self.arrays.leaf_tot[i] += d

    def _customer_delta(self, z: Category, k: int, y: Category, d: int):
        r = self.rest.get((z, k))
        if r is None:
            r = self.rest[(z, k)] = Restaurant()
        r.n += d
        c = r.counts.get(y, 0) + d
        if c:
            r.counts[y] = c
        else:
            del r.counts[y]
        a = self.arrays
        rid = a.rest_ids.get((z, k))
        if rid is not None and rid < len(a.rest_n):
            a.rest_n[rid] += d
        key = (z, self.kinds[k], y)
        j = a.rule_ids.get(key)
        if j is not None and j < a.n_rules_synced:
            a.rule_ny[j] += d

    def _top_delta(self, y: Category, d: int):
        m = self.top.get(y, 0) + d
        if m:
            self.top[y] = m
        else:
            del self.top[y]
        self.top_total += d
        i = self.arrays.cat_ids.get(y)
        if i is not None:
            self.arrays.top_m[i] += d

    # -- predictive probabilities ----------------------------------------

    def kind_prob(self, z: Category, k: int) -> float:
        beta = self.params.kind_prior
        kc = self.kind_counts.get(z)
        n = kc[k] if kc else 0
        return (n + beta) / (self.kind_tot.get(z, 0) + len(self.kinds) * beta)

    def top_prob(self, y: Category) -> float:
        return dp_predictive(self.top.get(y, 0), self.top_total, self.params.gamma, g0_prob(y, self.base))

    def arg_prob(self, z: Category, k: int, y: Category) -> float:
        r = self.rest.get((z, k))
        n_y, n = (r.counts.get(y, 0), r.n) if r else (0, 0)
        return dp_predictive(n_y, n, self.params.alpha_dp, self.top_prob(y))

    def emission_prob(self, z: Category, tag: int) -> float:
        eps = self.params.emission_prior
        lc = self.leaf_counts.get(z)
        n = lc[tag] if lc else 0
        return (n + eps) / (self.leaf_tot.get(z, 0) + self.params.n_tags * eps)

    def event_logprob(self, ev: tuple) -> float:
        z, k, x = ev
        lp = math.log(self.kind_prob(z, k))
        if k == 0:
            lp += math.log(self.emission_prob(z, x))
        elif self.binary[k]:
            lp += math.log(self.arg_prob(z, k, x))
        return lp

    # -- adding and removing events ----------------------------------------

    def add_event(self, ev: tuple, rng, log: list | None = None) -> float:
        """Add one event, sampling its table; returns its predictive log probability."""
        lp = self.event_logprob(ev)
        z, k, x = ev
        self._kind_delta(z, k, 1)
        if k == 0:
            self._leaf_delta(z, x, 1)
        elif self.binary[k]:
            r = self.rest.get((z, k))
            n_y = r.counts.get(x, 0) if r else 0
            new_w = self.params.alpha_dp * self.top_prob(x)
            u = rng.random() * (n_y + new_w)
            self._seat(z, k, x, u, log)
        return lp

    def _seat(self, z, k, y, u, log):
        """Seat a customer with dish y: an existing table if u < n_y (chosen in
        proportion to size), otherwise a new table."""
        r = self.rest.get((z, k))
        if r is None:
            r = self.rest[(z, k)] = Restaurant()
        tables = r.tables.get(y)
        if tables is not None and u < r.counts.get(y, 0):
            acc = 0
            for t, size in enumerate(tables):
                acc += size
                if u < acc:
                    break
            tables[t] += 1
            if log is not None:
                log.append(("join", z, k, y, t))
        else:
            if tables is None:
                tables = r.tables[y] = []
            tables.append(1)
            r.n_tables += 1
            self._top_delta(y, 1)
            t = len(tables) - 1
            if log is not None:
                log.append(("new", z, k, y, t))
        self._customer_delta(z, k, y, 1)

    def remove_event(self, ev: tuple, rng, log: list | None = None) -> float:
        """Remove one event (table chosen in proportion to size); returns the
        predictive log probability of the event given the remaining state."""
        z, k, x = ev
        self._kind_delta(z, k, -1)
        if k == 0:
            self._leaf_delta(z, x, -1)
        elif self.binary[k]:
            r = self.rest[(z, k)]
            tables = r.tables[x]
            u = rng.random() * r.counts[x]
            acc = 0
            for t, size in enumerate(tables):
                acc += size
                if u < acc:
                    break
            self._unseat(z, k, x, t, log)
        return self.event_logprob(ev)

    def _unseat(self, z, k, y, t, log):
        r = self.rest[(z, k)]
        tables = r.tables[y]
        tables[t] -= 1
        if tables[t] == 0:
            del tables[t]
            r.n_tables -= 1
            self._top_delta(y, -1)
            if not tables:
                del r.tables[y]
            if log is not None:
                log.append(("closed", z, k, y, t))
        elif log is not None:
            log.append(("left", z, k, y, t))
        self._customer_delta(z, k, y, -1)

    def _undo(self, log: list):
        """Revert table operations recorded in ``log`` (newest first)."""
        for op, z, k, y, t in reversed(log):
            r = self.rest.get((z, k))
            if r is None:
                r = self.rest[(z, k)] = Restaurant()
            if op == "join":
                r.tables[y][t] -= 1
                self._customer_delta(z, k, y, -1)
            elif op == "new":
                tables = r.tables[y]
                del tables[t]
                r.n_tables -= 1
                if not tables:
                    del r.tables[y]
                self._top_delta(y, -1)
                self._customer_delta(z, k, y, -1)
            elif op == "left":
                r.tables[y][t] += 1
                self._customer_delta(z, k, y, 1)
            else:  # closed
                r.tables.setdefault(y, []).insert(t, 1)
                r.n_tables += 1
                self._top_delta(y, 1)
                self._customer_delta(z, k, y, 1)

    def events(self, d: Derivation) -> list[tuple]:
        return _events(d, self.kind_index)

    # -- joint probabilities ---------------------------------------------

    def log_posterior(self) -> float:
        """Collapsed log joint of every seated event, seating included.

        Terms are added with fsum so the value does not depend on dict order.
        """
        p = self.params
        K = len(self.kinds)
        lg = math.lgamma
        terms = []
        for z, kc in self.kind_counts.items():
            n = self.kind_tot[z]
            if n:
                terms += [lg(K * p.kind_prior), -lg(K * p.kind_prior + n)]
                terms += [lg(p.kind_prior + c) - lg(p.kind_prior) for c in kc if c]
        for z, lc in self.leaf_counts.items():
            n = self.leaf_tot[z]
            if n:
                terms += [lg(p.n_tags * p.emission_prior), -lg(p.n_tags * p.emission_prior + n)]
                terms += [lg(p.emission_prior + c) - lg(p.emission_prior) for c in lc if c]
        a = p.alpha_dp
        for r in self.rest.values():
            if r.n:
                terms += [r.n_tables * math.log(a), lg(a), -lg(a + r.n)]
                terms += [lg(s) for tables in r.tables.values() for s in tables]
        terms.append(self._top_log())
        return math.fsum(terms)

    def _top_log(self, gamma: float | None = None) -> float:
        g = self.params.gamma if gamma is None else gamma
        if not self.top_total:
            return 0.0
        terms = [math.lgamma(g), -math.lgamma(g + self.top_total)]
        for y, m in self.top.items():
            gy = g * g0_prob(y, self.base)
            terms += [math.lgamma(m + gy), -math.lgamma(gy)]
        return math.fsum(terms)

    def seating_counts(self) -> dict:
        """Canonical multiset view: (parent, kind, dish) -> sorted table sizes."""
        out = {}
        for (z, k), r in self.rest.items():
            for y, tables in r.tables.items():
                out[(z.text, self.kinds[k].label, y.text)] = tuple(sorted(tables))
        return dict(sorted(out.items()))


# -- scoring ----------------------------------------------------------------


def crp_predictive(state: HdpState, parent: Category, kind: Combinator, y: Category) -> float:
    """Predictive probability of argument ``y`` in the (parent, kind) restaurant."""
    return state.arg_prob(parent, state.kind_index[kind], y)


@dataclass
class HdpScorer:
    """Chart scorer over the current state (log probabilities)."""

    state: HdpState

    def expansion(self, parent, rule, argument):
        s = self.state
        k = s.kind_index.get(rule)
        if k is None:
            return NEG_INF
        lp = math.log(s.kind_prob(parent, k))
        if s.binary[k]:
            lp += math.log(s.arg_prob(parent, k, argument))
        return lp

    def emission(self, cat, symbol):
        s = self.state
        return math.log(s.kind_prob(cat, 0)) + math.log(s.emission_prob(cat, int(symbol)))


def expansion_scorer(state: HdpState) -> HdpScorer:
    return HdpScorer(state)


def _score_vectors(state: HdpState):
    state._sync_rules()
    a = state.arrays
    p = state.params
    K = len(state.kinds)
    C = len(a.cats)
    kind_tot = a.kind_tot[:C]
    log_kind_den = np.log(kind_tot + K * p.kind_prior)
    rp = a.rule_parent
    scores = np.log(a.kind_n[rp, a.rule_kind] + p.kind_prior) - log_kind_den[rp]
    if len(rp):
        y = a.rule_arg
        top = (a.top_m[y] + p.gamma * a.g0[y]) / (state.top_total + p.gamma)
        arg = np.log(a.rule_ny + p.alpha_dp * top) - np.log(a.rest_n[a.rule_rest] + p.alpha_dp)
        scores = scores + np.where(a.rule_binary, arg, 0.0)
    leaf = (np.log(a.kind_n[:C, 0] + p.kind_prior) - log_kind_den)[:, None] \
        + np.log(a.leaf_n[:C] + p.emission_prior) \
        - np.log(a.leaf_tot[:C] + p.n_tags * p.emission_prior)[:, None]
    return scores, leaf


# -- candidate pools and templates -----------------------------------------


def initial_pool(rules: RuleConfig, depth: int = 2) -> frozenset:
    """Atoms expanded twice with atomic arguments, capped at ``depth``."""
    capped = rules.with_limits(max_depth=min(rules.max_depth, depth))
    atoms = [atom(a) for a in _grammar_atoms(rules)]
    pool = set(atoms)
    frontier = list(atoms)
    for _ in range(2):
        new = []
        for c in frontier:
            for rule, y, left, right in enumerate_expansions(c, capped, atoms):
                for kid in (left, right):
                    if kid is not None and kid not in pool:
                        pool.add(kid)
                        new.append(kid)
        frontier = new
    return frozenset(pool)


def _grammar_atoms(rules: RuleConfig) -> tuple:
    return tuple(a for a in rules.atoms if a != "Conj") or tuple(rules.atoms)


def candidate_pool(state: HdpState, extra_depth: int = 0) -> frozenset:
    """Atoms, every category in a current derivation, and their one-step
    expansions with arguments among the atoms and top-level dishes."""
    rules = state.rules.with_limits(max_depth=state.rules.max_depth + extra_depth)
    atoms = [atom(a) for a in _grammar_atoms(state.rules)]
    used = set(atoms)
    for d in state.derivations:
        if d is not None:
            used.update(n.cat for n in d.nodes())
    args = set(atoms) | set(state.top)
    pool = set(used)
    for c in used:
        for rule, y, left, right in enumerate_expansions(c, rules, args):
            pool.add(left)
            if right is not None:
                pool.add(right)
    return frozenset(pool)


def _template(state: HdpState, n: int, escaped: bool = False) -> CompiledChart:
    key = (n, escaped)
    cc = state._templates.get(key)
    if cc is not None:
        return cc
    if escaped:
        pool = candidate_pool(state, extra_depth=1) | state.pool
        rules = state.rules.with_limits(max_depth=state.rules.max_depth + 1)
    else:
        pool, rules = state.pool, state.rules
    lex = Lexicon({"*": sorted(pool, key=lambda c: c.text)})
    chart = build_chart(["*"] * n, lex, rules, goal=S, allowed=pool)
    cc = compile_chart(chart, state.arrays.rule_ids, _CatIds(state))
    if cc is None:
        raise NoParse(f"no S derivation of length {n} within the candidate pool")
    state._sync_rules()
    state._templates[key] = cc
    return cc


class _CatIds(dict):
    """dict facade over the state's category registry for compile_chart."""

    def __init__(self, state: HdpState):
        super().__init__()
        self.state = state

    def setdefault(self, cat, default=None):
        return self.state._cid(cat)

    def __getitem__(self, cat):
        return self.state._cid(cat)

    def __len__(self):
        return len(self.state.arrays.cats)


def set_pool(state: HdpState, pool: Iterable[Category]) -> None:
    pool = frozenset(pool)
    if pool != state.pool:
        state.pool = pool
        state.pool_version += 1
        state._templates.clear()


# -- inference --------------------------------------------------------------


def _tags_array(tags) -> np.ndarray:
    return np.asarray(tags, dtype=np.int64)


def _static_weight(state: HdpState, events: list, tags, rule_scores, leaf_scores) -> float:
    a = state.arrays
    w = 0.0
    for z, k, x in events:
        if k == 0:
            w += leaf_scores[a.cat_ids[z], x]
        else:
            w += rule_scores[a.rule_ids[(z, state.kinds[k], x)]]
    return w


def _template_for(state: HdpState, i: int) -> CompiledChart:
    n = len(state.corpus[i])
    if not state.escaped[i]:
        try:
            return _template(state, n)
        except NoParse:
            state.escaped[i] = True
    return _template(state, n, escaped=True)


def resample_sentence(state: HdpState, i: int, rng) -> bool:
    """One Metropolis-Hastings move for sentence ``i``; True if accepted."""
    tags = state.corpus[i]
    old = state.derivations[i]
    old_events = state.events(old)
    log: list = []
    lp_old = 0.0
    for ev in reversed(old_events):
        lp_old += state.remove_event(ev, rng, log)
    cc = _template_for(state, i)
    rule_scores, leaf_scores = _score_vectors(state)
    tag_arr = _tags_array(tags)
    new, w_new = cc.sample(rule_scores, leaf_scores, tag_arr, rng, list(tags))
    try:
        w_old = _static_weight(state, old_events, tags, rule_scores, leaf_scores)
    except KeyError:
        # the old derivation falls outside the current template (pool changed):
        # accept the fresh proposal outright, as an independent restart
        w_old = None
    new_events = state.events(new)
    add_log: list = []
    lp_new = 0.0
    for ev in new_events:
        lp_new += state.add_event(ev, rng, add_log)
    state.proposed += 1
    if w_old is None:
        log_ratio = 0.0
    else:
        log_ratio = (lp_new - w_new) - (lp_old - w_old)
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        state.derivations[i] = new
        state.accepted += 1
        return True
    # reject: take the proposal back out exactly and restore the old seating
    state._undo(add_log)
    for ev in new_events:
        z, k, x = ev
        state._kind_delta(z, k, -1)
        if k == 0:
            state._leaf_delta(z, x, -1)
    for ev in old_events:
        z, k, x = ev
        state._kind_delta(z, k, 1)
        if k == 0:
            state._leaf_delta(z, x, 1)
    state._undo(log)
    return False


def hdp_init(corpus: Sequence[Sequence[int]], rules: RuleConfig, params: HdpParams | None = None,
             rng=None, pool: Iterable[Category] | None = None,
             base: BaseDistribution | None = None) -> HdpState:
    """Seat initial derivations sampled from uniform-weight charts.

    ``pool`` fixes the candidate categories (implies ``params.fixed_pool``);
    otherwise the pool starts as the atoms expanded twice to depth 2.
    """
    params = params or HdpParams()
    if not corpus or not any(len(s) for s in corpus):
        raise EmptyCorpus("induction needs at least one nonempty sentence")
    if any(len(s) == 0 for s in corpus):
        raise EmptyCorpus("empty sentence in the tagged corpus")
    if any(t < 0 or t >= params.n_tags for s in corpus for t in s):
        raise ConfigError(f"tag ids must lie in [0, {params.n_tags})")
    rng = np.random.default_rng(rng)
    state = HdpState(corpus, rules, params, base)
    if pool is not None:
        params.fixed_pool = True
        set_pool(state, pool)
    else:
        set_pool(state, initial_pool(rules))
    for c in state.pool:
        state._cid(c)
    for i, tags in enumerate(state.corpus):
        cc = _template_for(state, i)
        state._sync_rules()
        zero_rules = np.zeros(len(state.arrays.rule_ids))
        zero_leaf = np.zeros((len(state.arrays.cats), params.n_tags))
        d, _ = cc.sample(zero_rules, zero_leaf, _tags_array(tags), rng, list(tags))
        for ev in state.events(d):
            state.add_event(ev, rng)
        state.derivations[i] = d
    return state


def hdp_gibbs_iteration(state: HdpState, rng) -> float:
    """Resample every sentence once (in corpus order); returns the log posterior."""
    p = state.params
    if not p.fixed_pool and state.iteration > 0 and state.iteration % p.pool_refresh == 0:
        set_pool(state, candidate_pool(state))
        state.escaped = [False] * len(state.corpus)
    for i in range(len(state.corpus)):
        resample_sentence(state, i, rng)
    if p.resample_hyper:
        resample_hyperparameters(state, rng)
    state.iteration += 1
    lp = state.log_posterior()
    state.history.append(lp)
    return lp


# -- hyperparameters ----------------------------------------------------------


def _slice(logf, x0: float, rng, width: float = 1.0, steps: int = 20) -> float:
    """One univariate slice-sampling update on log x (x > 0)."""
    u0 = math.log(x0)

    def f(u):
        return logf(math.exp(u)) + u  # Jacobian of the log transform

    level = f(u0) + math.log(rng.random())
    lo = u0 - width * rng.random()
    hi = lo + width
    for _ in range(steps):
        if f(lo) < level:
            break
        lo -= width
    for _ in range(steps):
        if f(hi) < level:
            break
        hi += width
    while True:
        u = lo + (hi - lo) * rng.random()
        if f(u) >= level:
            return math.exp(u)
        if u < u0:
            lo = u
        else:
            hi = u


def resample_hyperparameters(state: HdpState, rng) -> None:
    """Slice-sample alpha_dp and gamma under Gamma(1, 1) priors."""
    rests = [r for r in state.rest.values() if r.n]

    def log_alpha(a):
        return -a + sum(r.n_tables * math.log(a) + math.lgamma(a) - math.lgamma(a + r.n) for r in rests)

    def log_gamma(g):
        return -g + state._top_log(g)

    state.params.alpha_dp = _slice(log_alpha, state.params.alpha_dp, rng)
    state.params.gamma = _slice(log_gamma, state.params.gamma, rng)
    state._templates.clear()


# -- exact marginal over seatings ------------------------------------------


@lru_cache(maxsize=None)
def _stirling1(n: int, k: int) -> int:
    """Unsigned Stirling numbers of the first kind."""
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return _stirling1(n - 1, k - 1) + (n - 1) * _stirling1(n - 1, k)


def log_marginal(state: HdpState, max_terms: int = 10**6) -> float:
    """Log probability of all seated events with the seating summed out.

    Sums over table counts per (restaurant, dish) with Stirling numbers;
    exponential in the number of repeated dishes, so only for small states.
    """
    p = state.params
    K = len(state.kinds)
    lg = math.lgamma
    fixed = 0.0
    for z, kc in state.kind_counts.items():
        n = state.kind_tot[z]
        if n:
            fixed += lg(K * p.kind_prior) - lg(K * p.kind_prior + n)
            fixed += sum(lg(p.kind_prior + c) - lg(p.kind_prior) for c in kc if c)
    for z, lc in state.leaf_counts.items():
        n = state.leaf_tot[z]
        if n:
            fixed += lg(p.n_tags * p.emission_prior) - lg(p.n_tags * p.emission_prior + n)
            fixed += sum(lg(p.emission_prior + c) - lg(p.emission_prior) for c in lc if c)
    a = p.alpha_dp
    cells = []
    for (z, k), r in state.rest.items():
        if r.n:
            fixed += lg(a) - lg(a + r.n)
            for y, n_y in r.counts.items():
                cells.append((y, n_y))
    if math.prod(n for _, n in cells) > max_terms:
        raise ValueError("too many seating configurations to sum exactly")
    terms = []
    for ts in itertools.product(*[range(1, n + 1) for _, n in cells]):
        lw = 0.0
        m: dict = {}
        for (y, n_y), t in zip(cells, ts):
            lw += t * math.log(a) + math.log(_stirling1(n_y, t))
            m[y] = m.get(y, 0) + t
        g = p.gamma
        total = sum(m.values())
        if total:
            lw += lg(g) - lg(g + total)
            for y, my in m.items():
                gy = g * g0_prob(y, state.base)
                lw += lg(my + gy) - lg(gy)
        terms.append(lw)
    if not terms:
        return fixed
    top = max(terms)
    return fixed + top + math.log(math.fsum(math.exp(t - top) for t in terms))


# -- audits -------------------------------------------------------------------


def hdp_audit(state: HdpState) -> None:
    """Rebuild every count from the stored derivations and compare."""
    kind: dict = {}
    leaf: dict = {}
    cust: dict = {}
    for i, d in enumerate(state.derivations):
        if d is None:
            raise AuditError(f"sentence {i} has no derivation")
        if list(d.tokens) != list(state.corpus[i]):
            raise AuditError(f"sentence {i}: derivation leaves do not match its tags")
        for z, k, x in state.events(d):
            kind[(z, k)] = kind.get((z, k), 0) + 1
            if k == 0:
                leaf[(z, x)] = leaf.get((z, x), 0) + 1
            elif state.binary[k]:
                cust[(z, k, x)] = cust.get((z, k, x), 0) + 1
    got_kind = {(z, k): c for z, kc in state.kind_counts.items() for k, c in enumerate(kc) if c}
    got_leaf = {(z, t): c for z, lc in state.leaf_counts.items() for t, c in enumerate(lc) if c}
    if got_kind != kind:
        raise AuditError("kind counts disagree with derivations")
    if got_leaf != leaf:
        raise AuditError("emission counts disagree with derivations")
    got_cust, top = {}, {}
    for (z, k), r in state.rest.items():
        n = 0
        n_tables = 0
        for y, tables in r.tables.items():
            if not tables or min(tables) < 1:
                raise AuditError("empty table left in a restaurant")
            if sum(tables) != r.counts.get(y, 0):
                raise AuditError("table sizes disagree with customer counts")
            got_cust[(z, k, y)] = sum(tables)
            top[y] = top.get(y, 0) + len(tables)
            n += sum(tables)
            n_tables += len(tables)
            if not within_limits(y, state.rules.with_limits(max_depth=state.rules.max_depth + 1)):
                raise AuditError(f"seated category {y} breaks the limits")
        if n != r.n or n_tables != r.n_tables or set(r.counts) != set(r.tables):
            raise AuditError("restaurant totals disagree with its tables")
    if got_cust != cust:
        raise AuditError("restaurant customers disagree with derivations")
    if top != state.top or sum(top.values()) != state.top_total:
        raise AuditError("top-level table counts disagree with restaurants")
    a = state.arrays
    for cat, i in a.cat_ids.items():
        kc = state.kind_counts.get(cat, [0] * len(state.kinds))
        lc = state.leaf_counts.get(cat, [0] * state.params.n_tags)
        if not (np.array_equal(a.kind_n[i], kc) and np.array_equal(a.leaf_n[i], lc)
                and a.top_m[i] == state.top.get(cat, 0)):
            raise AuditError(f"score arrays disagree with counts for {cat}")
    for (z, rule, y), j in a.rule_ids.items():
        if j < a.n_rules_synced:
            r = state.rest.get((z, state.kind_index[rule]))
            if a.rule_ny[j] != (r.counts.get(y, 0) if r else 0):
                raise AuditError("rule arrays disagree with restaurant counts")
    for (z, k), rid in a.rest_ids.items():
        r = state.rest.get((z, k))
        if rid < len(a.rest_n) and a.rest_n[rid] != (r.n if r else 0):
            raise AuditError("restaurant arrays disagree with restaurant totals")


# -- reporting ----------------------------------------------------------------


@dataclass(frozen=True)
class GrammarRule:
    parent: str
    kind: str
    argument: str
    count: int
    prob: float
    kind_prob: float


def extract_grammar(state: HdpState, min_count: int = 1):
    """Seated expansions with at least ``min_count`` customers, and the leaf
    emission table per parent.

    ``prob`` is the argument's predictive probability within its
    (parent, kind) restaurant; raise expansions, whose argument is fixed by
    the parent, report 1. Sorted by parent text, then probability descending.
    """
    rules = []
    for (z, k), r in state.rest.items():
        for y, n_y in r.counts.items():
            if n_y >= min_count:
                rules.append(GrammarRule(z.text, state.kinds[k].label, y.text, n_y,
                                         state.arg_prob(z, k, y), state.kind_prob(z, k)))
    for z, kc in state.kind_counts.items():
        for k, c in enumerate(kc):
            if k and not state.binary[k] and c >= min_count:
                rule = state.kinds[k]
                rules.append(GrammarRule(z.text, rule.label, z.arg.arg.text, c, 1.0, state.kind_prob(z, k)))
    rules.sort(key=lambda g: (g.parent, -g.prob, g.kind, g.argument))
    emissions = {}
    for z in sorted(state.leaf_counts, key=lambda c: c.text):
        if state.leaf_tot[z]:
            emissions[z.text] = [state.emission_prob(z, t) for t in range(state.params.n_tags)]
    return rules, emissions


def grammar_table(rules: list) -> str:
    lines = [f"{g.parent}\t{g.kind}\t{g.argument}\t{g.count}\t{g.prob:.6f}" for g in rules]
    return "\n".join(lines) + ("\n" if lines else "")


def stick_weights(state: HdpState, parent: Category, kind: Combinator) -> list[tuple[str, float]]:
    """Posterior-mean stick-breaking weights of one restaurant's DP.

    Dishes are ordered by customer count (ties by text); stick k has mean
    (1 + n_k) / (1 + alpha + n_k + sum of later counts). The last entry is the
    mass left for unseated categories.
    """
    r = state.rest.get((parent, state.kind_index[kind]))
    if r is None or not r.n:
        return [("<rest>", 1.0)]
    items = sorted(r.counts.items(), key=lambda kv: (-kv[1], kv[0].text))
    alpha = state.params.alpha_dp
    remaining = 1.0
    tail = r.n
    out = []
    for y, n_y in items:
        tail -= n_y
        v = (1.0 + n_y) / (1.0 + alpha + n_y + tail)
        out.append((y.text, remaining * v))
        remaining *= 1.0 - v
    out.append(("<rest>", remaining))
    return out


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(state: HdpState, path, rng: np.random.Generator | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "iteration": state.iteration,
        "rules": state.rules.to_names(),
        "params": asdict(state.params),
        "base": {"atoms": list(state.base.atoms), "p_slash": state.base.p_slash,
                 "p_forward": state.base.p_forward},
        "corpus": [list(s) for s in state.corpus],
        "derivations": [d.to_record() for d in state.derivations],
        "escaped": state.escaped,
        "pool": sorted(c.text for c in state.pool),
        "seating": [
            {"parent": z.text, "kind": state.kinds[k].label,
             "tables": [[y.text, list(tables)] for y, tables in sorted(r.tables.items(), key=lambda kv: kv[0].text)]}
            for (z, k), r in sorted(state.rest.items(), key=lambda kv: (kv[0][0].text, kv[0][1])) if r.n
        ],
        "history": state.history,
        "accepted": state.accepted,
        "proposed": state.proposed,
        "rng": rng.bit_generator.state if rng is not None else None,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[HdpState, np.random.Generator | None]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')}")
    rules = RuleConfig.from_names(**doc["rules"])
    params = HdpParams(**doc["params"])
    base = BaseDistribution(tuple(doc["base"]["atoms"]), doc["base"]["p_slash"], doc["base"]["p_forward"])
    state = HdpState(doc["corpus"], rules, params, base)
    loose = rules.with_limits(max_depth=rules.max_depth + 1)
    set_pool(state, [parse_category(t, loose) for t in doc["pool"]])
    for c in sorted(state.pool, key=lambda c: c.text):
        state._cid(c)
    state.derivations = [_from_record(rec, loose) for rec in doc["derivations"]]
    state.escaped = list(doc["escaped"])
    for d in state.derivations:
        for z, k, x in state.events(d):
            state._kind_delta(z, k, 1)
            if k == 0:
                state._leaf_delta(z, x, 1)
    for block in doc["seating"]:
        z = parse_category(block["parent"], loose)
        k = state.kind_index[parse_combinator(block["kind"], loose)]
        r = state.rest.setdefault((z, k), Restaurant())
        for y_text, tables in block["tables"]:
            y = parse_category(y_text, loose)
            r.tables[y] = list(tables)
            r.n_tables += len(tables)
            for _ in tables:
                state._top_delta(y, 1)
            for _ in range(sum(tables)):
                state._customer_delta(z, k, y, 1)
    state.iteration = doc["iteration"]
    state.history = list(doc["history"])
    state.accepted = doc["accepted"]
    state.proposed = doc["proposed"]
    rng = None
    if doc.get("rng") is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng"]
    return state, rng


def _from_record(rec: dict, rules: RuleConfig) -> Derivation:
    d = Derivation.from_record(rec, rules)
    return _retag(d)


def _retag(d: Derivation) -> Derivation:
    if not d.children:
        return Derivation(d.cat, d.start, d.end, d.rule, (), int(d.token))
    return Derivation(d.cat, d.start, d.end, d.rule, tuple(_retag(c) for c in d.children))


# -- training and parsing -------------------------------------------------------


def hdp_parse(state: HdpState, tags: Sequence[int]) -> Derivation:
    """Most probable derivation of a tag sequence under the current predictive scores."""
    tags = [int(t) for t in tags]
    if not tags:
        raise NoParse("empty sentence")
    if any(t < 0 or t >= state.params.n_tags for t in tags):
        raise ConfigError(f"tag ids must lie in [0, {state.params.n_tags})")
    try:
        cc = _template(state, len(tags))
    except NoParse:
        cc = _template(state, len(tags), escaped=True)
    rule_scores, leaf_scores = _score_vectors(state)
    d, _ = cc.viterbi(rule_scores, leaf_scores, _tags_array(tags), tags)
    if d is None:
        raise NoParse("no derivation under the current scores")
    return d


@dataclass
class ChainResult:
    seed: int
    state: HdpState
    history: list
    score: float  # mean log posterior over the final tenth of the run


def hdp_train(corpus, rules: RuleConfig, params: HdpParams | None = None, iterations: int = 500,
              chains: int = 3, seed: int = 0, audit_every: int = 0, progress=None) -> tuple[HdpState, list]:
    """Run independent chains sequentially and keep the one with the highest
    log posterior, averaged over its last tenth of iterations to damp seating noise."""
    params = params or HdpParams()
    seeds = np.random.SeedSequence(seed).spawn(chains)
    results = []
    for c, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        state = hdp_init(corpus, rules, HdpParams(**asdict(params)), rng)
        for it in range(1, iterations + 1):
            lp = hdp_gibbs_iteration(state, rng)
            if audit_every and it % audit_every == 0:
                hdp_audit(state)
            if progress is not None:
                progress(c, it, lp)
        tail = state.history[-max(1, iterations // 10):] if state.history else [state.log_posterior()]
        results.append(ChainResult(int(ss.generate_state(1)[0]), state, list(state.history),
                                   float(np.mean(tail))))
    best = max(range(len(results)), key=lambda i: (results[i].score, -i))
    return results[best].state, results
