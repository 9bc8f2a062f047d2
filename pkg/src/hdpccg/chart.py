"""Packed CKY charts over CCG categories.

A chart holds one item per (span, category); ambiguity lives in the item's
backpointers. Weights are log-space throughout. Backpointers of an item are
kept sorted by (combinator kind, argument text, split point), which is both
the accumulation order for inside sums and the Viterbi tie-break order.

Type-raising is applied once per cell after its binary items are complete,
and only to categories in ``RuleConfig.raisable`` (never to raise outputs),
so unary chains have length at most one.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Protocol, Sequence

import numpy as np

from . import _kernels
from .categories import (
    BACKWARD,
    DEFAULT_RULES,
    FORWARD,
    LEX,
    S,
    Category,
    Combinator,
    Kind,
    RuleConfig,
    argument_of,
    cat_key,
    combine,
    parse_category,
    parse_combinator,
)
from .errors import CategorySyntaxError, EmptyInput, LimitError, NoParse, UnknownToken

MAX_LENGTH = 40
COUNT_CAP = 10**18
NEG_INF = float("-inf")


class CountSaturated(RuntimeWarning):
    pass


# -- lexicon ----------------------------------------------------------------


class Lexicon:
    """Map from a token (or tag) to weighted lexical categories.

    Text form is one entry per line, ``token => Category [weight]``; ``#``
    starts a comment. Repeated (token, category) entries add their weights.
    """

    def __init__(self, entries: dict | None = None):
        self._entries: dict[Any, dict[Category, float]] = {}
        for symbol, cats in (entries or {}).items():
            for entry in cats:
                cat, weight = entry if isinstance(entry, tuple) else (entry, 1.0)
                self.add(symbol, cat, weight)

    def add(self, symbol, cat: Category, weight: float = 1.0):
        if not (weight >= 0 and math.isfinite(weight)):
            raise ValueError(f"lexical weight for {symbol!r} must be finite and nonnegative")
        row = self._entries.setdefault(symbol, {})
        row[cat] = row.get(cat, 0.0) + weight

    def __contains__(self, symbol):
        return symbol in self._entries

    def __getitem__(self, symbol) -> list[tuple[Category, float]]:
        try:
            return list(self._entries[symbol].items())
        except KeyError:
            raise UnknownToken(f"no lexical entry for {symbol!r}") from None

    def weight(self, symbol, cat: Category) -> float:
        return self._entries.get(symbol, {}).get(cat, 0.0)

    def symbols(self) -> list:
        return list(self._entries)

    @classmethod
    def from_text(cls, text: str, rules: RuleConfig | None = None) -> "Lexicon":
        lex = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=>" not in line:
                raise CategorySyntaxError(f"line {lineno}: expected 'token => Category [weight]'")
            token, rhs = (part.strip() for part in line.split("=>", 1))
            fields = rhs.split()
            if not token or not fields or len(fields) > 2:
                raise CategorySyntaxError(f"line {lineno}: expected 'token => Category [weight]'")
            try:
                cat = parse_category(fields[0], rules)
                weight = float(fields[1]) if len(fields) == 2 else 1.0
            except (CategorySyntaxError, LimitError, ValueError) as exc:
                raise CategorySyntaxError(f"line {lineno}: {exc}") from None
            lex.add(token, cat, weight)
        return lex

    def to_text(self) -> str:
        lines = []
        for symbol, row in self._entries.items():
            for cat, w in row.items():
                lines.append(f"{symbol} => {cat.text} {w!r}")
        return "\n".join(lines) + "\n"


# -- scorers ----------------------------------------------------------------


class Scorer(Protocol):
    def expansion(self, parent: Category, rule: Combinator, argument: Category) -> float: ...

    def emission(self, cat: Category, symbol) -> float: ...


class UnitScorer:
    """Every expansion and emission weighs 1 (log 0): inside sums count derivations."""

    def expansion(self, parent, rule, argument):
        return 0.0

    def emission(self, cat, symbol):
        return 0.0


class LexiconScorer:
    def __init__(self, lexicon: Lexicon):
        self.lexicon = lexicon

    def expansion(self, parent, rule, argument):
        return 0.0

    def emission(self, cat, symbol):
        w = self.lexicon.weight(symbol, cat)
        return math.log(w) if w > 0 else NEG_INF


@dataclass
class FunctionScorer:
    expansion_fn: Callable = lambda parent, rule, arg: 0.0
    emission_fn: Callable = lambda cat, symbol: 0.0

    def expansion(self, parent, rule, argument):
        return self.expansion_fn(parent, rule, argument)

    def emission(self, cat, symbol):
        return self.emission_fn(cat, symbol)


# -- chart ------------------------------------------------------------------


@dataclass(eq=False)
class ParseItem:
    start: int
    end: int
    cat: Category
    backpointers: list = field(default_factory=list)
    inside: float = NEG_INF

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def has_raise(self) -> bool:
        return any(bp.rule.kind.is_raise for bp in self.backpointers)

    def __repr__(self):
        return f"ParseItem({self.start}, {self.end}, {self.cat.text}, bps={len(self.backpointers)})"


@dataclass(frozen=True, eq=False)
class Backpointer:
    rule: Combinator
    left: ParseItem | None
    right: ParseItem | None
    split: int
    arg: Category | None

    @property
    def sort_key(self) -> tuple:
        return (int(self.rule.kind), self.arg.text if self.arg is not None else "", self.split,
                self.rule.target.text if self.rule.target is not None else "")


class _Cell:
    """Category-indexed views of one chart cell, used to find combinable pairs."""

    __slots__ = ("by_cat", "fwd", "bwd", "fwd_by_result", "bwd_by_result", "fwd2", "bwd2")

    def __init__(self, items: dict[Category, ParseItem]):
        self.by_cat = items
        self.fwd, self.bwd = [], []
        self.fwd_by_result, self.bwd_by_result = {}, {}
        self.fwd2, self.bwd2 = {}, {}
        for cat, item in items.items():
            if cat.slash == FORWARD:
                self.fwd.append(item)
                self.fwd_by_result.setdefault(cat.result, []).append(item)
                if cat.result.slash == FORWARD:
                    self.fwd2.setdefault(cat.result.result, []).append(item)
            elif cat.slash == BACKWARD:
                self.bwd.append(item)
                self.bwd_by_result.setdefault(cat.result, []).append(item)
                if cat.result.slash == BACKWARD:
                    self.bwd2.setdefault(cat.result.result, []).append(item)


def _pairs(kind: Kind, L: _Cell, R: _Cell) -> Iterator[tuple[ParseItem, ParseItem]]:
    if kind == Kind.FWD_APP:
        for l in L.fwd:
            r = R.by_cat.get(l.cat.arg)
            if r is not None:
                yield l, r
    elif kind == Kind.BWD_APP:
        for r in R.bwd:
            l = L.by_cat.get(r.cat.arg)
            if l is not None:
                yield l, r
    elif kind == Kind.FWD_COMP:
        for l in L.fwd:
            for r in R.fwd_by_result.get(l.cat.arg, ()):
                yield l, r
    elif kind == Kind.BWD_COMP:
        for r in R.bwd:
            for l in L.bwd_by_result.get(r.cat.arg, ()):
                yield l, r
    elif kind == Kind.FWD_XCOMP:
        for l in L.fwd:
            for r in R.bwd_by_result.get(l.cat.arg, ()):
                yield l, r
    elif kind == Kind.BWD_XCOMP:
        for r in R.bwd:
            for l in L.fwd_by_result.get(r.cat.arg, ()):
                yield l, r
    elif kind == Kind.FWD_COMP2:
        for l in L.fwd:
            for r in R.fwd2.get(l.cat.arg, ()):
                yield l, r
    elif kind == Kind.BWD_COMP2:
        for r in R.bwd:
            for l in L.bwd2.get(r.cat.arg, ()):
                yield l, r


@dataclass(eq=False)
class PackedChart:
    tokens: tuple
    rules: RuleConfig
    goal: Category
    cells: dict
    limit_rejections: int = 0
    inside_model: Any = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    def cell(self, start: int, end: int) -> dict[Category, ParseItem]:
        return self.cells.get((start, end), {})

    def get(self, start: int, end: int, cat: Category) -> ParseItem | None:
        return self.cells.get((start, end), {}).get(cat)

    def root(self, goal: Category | None = None) -> ParseItem | None:
        return self.get(0, self.n, goal or self.goal)

    def items(self) -> Iterator[ParseItem]:
        """All items in a bottom-up order: narrower spans first, and within a
        cell every raise-fed item after the items it depends on."""
        n = self.n
        for width in range(1, n + 1):
            for start in range(0, n - width + 1):
                cell = self.cells.get((start, start + width))
                if not cell:
                    continue
                late = []
                for item in cell.values():
                    if item.has_raise:
                        late.append(item)
                    else:
                        yield item
                yield from late

    def __len__(self):
        return sum(len(c) for c in self.cells.values())


def build_chart(tokens: Sequence, lexicon: Lexicon, rules: RuleConfig | None = None,
                goal: Category = S, *, allowed: Iterable[Category] | None = None,
                max_length: int = MAX_LENGTH) -> PackedChart:
    """CKY closure of ``tokens`` under ``rules``.

    ``allowed`` restricts every item (lexical or derived) to a category set,
    which is how induction bounds the search to its candidate pool.
    """
    rules = rules or DEFAULT_RULES
    tokens = tuple(tokens)
    n = len(tokens)
    if n == 0:
        raise EmptyInput("cannot parse an empty token sequence")
    if n > max_length:
        raise ValueError(f"sentence of length {n} exceeds the maximum of {max_length}")
    allowed = None if allowed is None else set(allowed)
    raisable = set(rules.raisable)
    binary = rules.binary_combinators()
    raises = rules.raise_combinators()
    chart = PackedChart(tokens, rules, goal, {})
    index: dict[tuple[int, int], _Cell] = {}

    def close(start, end, cell):
        if raises:
            for item in list(cell.values()):
                if item.cat not in raisable:
                    continue
                for rule in raises:
                    try:
                        out = combine(rule, item.cat, None, rules)
                    except LimitError:
                        chart.limit_rejections += 1
                        continue
                    if allowed is not None and out not in allowed:
                        continue
                    parent = cell.get(out)
                    if parent is None:
                        parent = cell[out] = ParseItem(start, end, out)
                    parent.backpointers.append(Backpointer(rule, item, None, -1, item.cat))
        for item in cell.values():
            item.backpointers.sort(key=lambda bp: bp.sort_key)
        chart.cells[(start, end)] = cell
        index[(start, end)] = _Cell(cell)

    for i, tok in enumerate(tokens):
        cell: dict[Category, ParseItem] = {}
        for cat, weight in lexicon[tok]:
            if allowed is not None and cat not in allowed:
                continue
            item = cell.get(cat)
            if item is None:
                item = cell[cat] = ParseItem(i, i + 1, cat)
                item.backpointers.append(Backpointer(LEX, None, None, -1, None))
        close(i, i + 1, cell)

    for width in range(2, n + 1):
        for start in range(0, n - width + 1):
            end = start + width
            cell = {}
            for split in range(start + 1, end):
                L, R = index[(start, split)], index[(split, end)]
                if not L.by_cat or not R.by_cat:
                    continue
                for rule in binary:
                    for l, r in _pairs(rule.kind, L, R):
                        try:
                            out = combine(rule, l.cat, r.cat, rules)
                        except LimitError:
                            chart.limit_rejections += 1
                            continue
                        if allowed is not None and out not in allowed:
                            continue
                        item = cell.get(out)
                        if item is None:
                            item = cell[out] = ParseItem(start, end, out)
                        item.backpointers.append(
                            Backpointer(rule, l, r, split, argument_of(rule, l.cat, r.cat)))
            close(start, end, cell)
    return chart


# -- counting and weights ---------------------------------------------------


def count_derivations(chart: PackedChart, goal: Category | None = None) -> int:
    """Exact number of derivations of ``goal`` over the whole sentence.

    Counts saturate at COUNT_CAP, in which case a CountSaturated warning is
    issued and COUNT_CAP returned.
    """
    root = chart.root(goal)
    if root is None:
        return 0
    counts: dict[int, int] = {}
    saturated = False
    for item in chart.items():
        total = 0
        for bp in item.backpointers:
            c = 1
            if bp.left is not None:
                c *= counts[id(bp.left)]
            if bp.right is not None:
                c *= counts[id(bp.right)]
            total += c
        if total > COUNT_CAP:
            total = COUNT_CAP
            saturated = True
        counts[id(item)] = total
    result = counts[id(root)]
    if saturated and result >= COUNT_CAP:
        warnings.warn(f"derivation count saturated at {COUNT_CAP}", CountSaturated, stacklevel=2)
    return result


def logsumexp(values: Sequence[float]) -> float:
    """log(sum(exp(v))) accumulated with fsum after shifting by the maximum."""
    if not values:
        return NEG_INF
    m = max(values)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def edge_score(chart: PackedChart, item: ParseItem, bp: Backpointer, model: Scorer) -> float:
    if bp.rule.kind == Kind.LEX:
        return model.emission(item.cat, chart.tokens[item.start])
    return model.expansion(item.cat, bp.rule, bp.arg)


def _with_children(score: float, bp: Backpointer) -> float:
    if bp.left is not None:
        score += bp.left.inside
    if bp.right is not None:
        score += bp.right.inside
    return score


def inside_weights(chart: PackedChart, model: Scorer) -> PackedChart:
    """Fill ``item.inside`` for every item (in place) and return the chart."""
    for item in chart.items():
        item.inside = logsumexp([_with_children(edge_score(chart, item, bp, model), bp)
                                 for bp in item.backpointers])
    chart.inside_model = model
    return chart


# -- derivations ------------------------------------------------------------


@dataclass(frozen=True)
class Derivation:
    cat: Category
    start: int
    end: int
    rule: Combinator
    children: tuple = ()
    token: Any = None

    def nodes(self) -> Iterator["Derivation"]:
        """Pre-order traversal (parent, then left subtree, then right)."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list["Derivation"]:
        return [n for n in self.nodes() if not n.children]

    @property
    def tokens(self) -> list:
        return [leaf.token for leaf in self.leaves()]

    def to_bracketed(self) -> str:
        if not self.children:
            return f"({self.cat.text} {self.token})"
        return f"({self.cat.text} " + " ".join(c.to_bracketed() for c in self.children) + ")"

    def to_record(self) -> dict:
        rec = {"cat": self.cat.text, "span": [self.start, self.end], "rule": self.rule.label}
        if self.children:
            rec["children"] = [c.to_record() for c in self.children]
        else:
            rec["token"] = self.token
        return rec

    @classmethod
    def from_record(cls, rec: dict, rules: RuleConfig | None = None) -> "Derivation":
        cat = parse_category(rec["cat"], rules)
        rule = parse_combinator(rec["rule"], rules)
        children = tuple(cls.from_record(c, rules) for c in rec.get("children", ()))
        start, end = rec["span"]
        return cls(cat, start, end, rule, children, rec.get("token"))

    def check(self, rules: RuleConfig | None = None) -> None:
        """Raise ValueError unless every internal node recombines via its rule."""
        for node in self.nodes():
            if node.rule.kind == Kind.LEX:
                if node.children or node.end - node.start != 1:
                    raise ValueError(f"malformed leaf {node.cat}")
                continue
            kids = node.children
            out = combine(node.rule, kids[0].cat, kids[1].cat if len(kids) > 1 else None, rules)
            if out is not node.cat:
                raise ValueError(f"{node.rule.label} does not yield {node.cat} from {[k.cat.text for k in kids]}")


def derivation_from_bracketed(text: str, rules: RuleConfig | None = None) -> Derivation:
    """Parse ``(S (NP (NP/N the) (N dog)) (S\\NP sleeps))`` back into a derivation.

    Combinators are recovered by trying every kind against the node's children.
    """
    rules = rules or DEFAULT_RULES
    # A label is the run of non-space characters after "(", which keeps the
    # parentheses inside category names intact.
    pos = 0
    n = len(text)
    leaf_index = 0

    def skip():
        nonlocal pos
        while pos < n and text[pos].isspace():
            pos += 1

    def node() -> Derivation:
        nonlocal pos, leaf_index
        skip()
        if pos >= n or text[pos] != "(":
            raise CategorySyntaxError(f"expected '(' at {pos} in tree")
        pos += 1
        j = pos
        depth = 0
        while j < n and not (text[j].isspace() and depth == 0):
            if text[j] == "(":
                depth += 1
            elif text[j] == ")":
                if depth == 0:
                    break
                depth -= 1
            j += 1
        label = text[pos:j]
        pos = j
        cat = parse_category(label, rules)
        skip()
        if pos < n and text[pos] == "(":
            kids = []
            while True:
                skip()
                if pos < n and text[pos] == ")":
                    pos += 1
                    break
                kids.append(node())
            return _assemble(cat, kids, rules)
        j = pos
        while j < n and not text[j].isspace() and text[j] != ")":
            j += 1
        token = text[pos:j]
        pos = j
        skip()
        if pos >= n or text[pos] != ")":
            raise CategorySyntaxError("unbalanced tree")
        pos += 1
        leaf = Derivation(cat, leaf_index, leaf_index + 1, LEX, (), token)
        leaf_index += 1
        return leaf

    tree = node()
    skip()
    if pos != n:
        raise CategorySyntaxError("trailing text after tree")
    return tree


def _assemble(cat: Category, kids: list[Derivation], rules: RuleConfig) -> Derivation:
    loose = rules.with_limits(max_depth=64, max_arity=64)
    if len(kids) == 1:
        child = kids[0]
        if cat.atom is None:
            for kind in (Kind.FWD_RAISE, Kind.BWD_RAISE):
                rule = Combinator(kind, cat.result)
                if combine(rule, child.cat, None, loose) is cat:
                    return Derivation(cat, child.start, child.end, rule, (child,))
        raise CategorySyntaxError(f"no unary rule yields {cat} from {child.cat}")
    if len(kids) == 2:
        left, right = kids
        for kind in Kind:
            if not kind.is_binary:
                continue
            rule = Combinator(kind)
            if combine(rule, left.cat, right.cat, loose) is cat:
                return Derivation(cat, left.start, right.end, rule, (left, right))
        raise CategorySyntaxError(f"no rule combines {left.cat} and {right.cat} into {cat}")
    raise CategorySyntaxError("tree nodes must have one or two children")


def _build(chart: PackedChart, item: ParseItem, choose: Callable[[ParseItem], Backpointer]) -> Derivation:
    bp = choose(item)
    if bp.rule.kind == Kind.LEX:
        return Derivation(item.cat, item.start, item.end, LEX, (), chart.tokens[item.start])
    kids = [_build(chart, bp.left, choose)]
    if bp.right is not None:
        kids.append(_build(chart, bp.right, choose))
    return Derivation(item.cat, item.start, item.end, bp.rule, tuple(kids))


def viterbi_derivation(chart: PackedChart, model: Scorer, goal: Category | None = None) -> Derivation | None:
    """A maximum-weight derivation; ties go to the first backpointer in sort order."""
    root = chart.root(goal)
    if root is None:
        return None
    best: dict[int, tuple[float, Backpointer]] = {}
    for item in chart.items():
        top, arg = NEG_INF, None
        for bp in item.backpointers:
            s = edge_score(chart, item, bp, model)
            if bp.left is not None:
                s += best[id(bp.left)][0]
            if bp.right is not None:
                s += best[id(bp.right)][0]
            if arg is None or s > top:
                top, arg = s, bp
        best[id(item)] = (top, arg)
    if best[id(root)][0] == NEG_INF:
        return None
    return _build(chart, root, lambda it: best[id(it)][1])


def derivation_logweight(d: Derivation, model: Scorer) -> float:
    total = 0.0
    for node in d.nodes():
        if node.rule.kind == Kind.LEX:
            total += model.emission(node.cat, node.token)
        else:
            kids = node.children
            arg = argument_of(node.rule, kids[0].cat, kids[1].cat if len(kids) > 1 else None)
            total += model.expansion(node.cat, node.rule, arg)
    return total


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_derivation(chart: PackedChart, model: Scorer, rng, goal: Category | None = None) -> Derivation:
    """Draw a derivation with probability proportional to its weight.

    Top-down: at each item a backpointer is picked with probability
    exp(edge + inside(children) - inside(item)).
    """
    rng = as_rng(rng)
    root = chart.root(goal)
    if root is None:
        raise NoParse(f"no {(goal or chart.goal).text} spans the input")
    if chart.inside_model is not model:
        inside_weights(chart, model)
    if root.inside == NEG_INF:
        raise NoParse("goal has zero inside weight")

    def choose(item: ParseItem) -> Backpointer:
        u = rng.random()
        acc = 0.0
        bps = item.backpointers
        for bp in bps:
            acc += math.exp(_with_children(edge_score(chart, item, bp, model), bp) - item.inside)
            if u < acc:
                return bp
        for bp in reversed(bps):
            if _with_children(edge_score(chart, item, bp, model), bp) > NEG_INF:
                return bp
        raise NoParse("item has no live backpointer")

    return _build(chart, root, choose)


def extract_spans(d: Derivation) -> set[tuple[int, int]]:
    """Spans of internal nodes, excluding single tokens and the whole sentence."""
    full = (d.start, d.end)
    return {(n.start, n.end) for n in d.nodes()
            if n.children and n.end - n.start > 1 and (n.start, n.end) != full}


# -- compiled charts --------------------------------------------------------


@dataclass(eq=False)
class CompiledChart:
    """Array form of the goal-reachable part of a chart.

    Items are in bottom-up order; backpointers of item i occupy
    ``item_ptr[i]:item_ptr[i+1]``. Binary and unary backpointers point at a
    rule id (``bp_rule``) whose log score the caller supplies; leaf
    backpointers carry a category id and token position so emission scores
    can be looked up per sentence (``leaf_scores[cat_id, symbol_id]``). The
    same compiled chart therefore serves every sentence of one length when
    the leaves are unrestricted.
    """

    n: int
    items: list
    item_cat: np.ndarray
    item_ptr: np.ndarray
    bp_left: np.ndarray
    bp_right: np.ndarray
    bp_rule: np.ndarray
    bp_leafcat: np.ndarray
    bp_pos: np.ndarray
    bp_meta: list
    root: int

    @property
    def n_backpointers(self) -> int:
        return len(self.bp_left)

    def inside(self, rule_scores: np.ndarray, leaf_scores: np.ndarray, symbols: np.ndarray):
        return _kernels.inside_pass(self.item_ptr, self.bp_left, self.bp_right, self.bp_rule,
                                    self.bp_leafcat, self.bp_pos, rule_scores, leaf_scores, symbols)

    def sample(self, rule_scores, leaf_scores, symbols, rng, tokens: Sequence | None = None):
        """Sample a derivation; returns (derivation, log weight of the sampled tree)."""
        rng = as_rng(rng)
        inside, bp_total = self.inside(rule_scores, leaf_scores, symbols)
        if not inside[self.root] > NEG_INF:
            raise NoParse("goal has zero inside weight")
        uniforms = rng.random(4 * self.n + 2)
        items, bps = _kernels.sample_pass(self.item_ptr, self.bp_left, self.bp_right, bp_total,
                                          inside, self.root, uniforms)
        d = self._derivation(items, bps, tokens if tokens is not None else list(symbols))
        weight = 0.0
        for b in bps:
            weight += _kernels.bp_score(b, self.bp_rule, self.bp_leafcat, self.bp_pos,
                                        rule_scores, leaf_scores, symbols)
        return d, weight

    def viterbi(self, rule_scores, leaf_scores, symbols, tokens: Sequence | None = None):
        score, best = _kernels.viterbi_pass(self.item_ptr, self.bp_left, self.bp_right, self.bp_rule,
                                            self.bp_leafcat, self.bp_pos, rule_scores, leaf_scores, symbols)
        if not score[self.root] > NEG_INF:
            return None, NEG_INF
        order_items, order_bps = [], []
        stack = [self.root]
        while stack:
            it = stack.pop()
            b = best[it]
            order_items.append(it)
            order_bps.append(b)
            if self.bp_right[b] >= 0:
                stack.append(self.bp_right[b])
            if self.bp_left[b] >= 0:
                stack.append(self.bp_left[b])
        d = self._derivation(order_items, order_bps, tokens if tokens is not None else list(symbols))
        return d, float(score[self.root])

    def _derivation(self, items, bps, tokens) -> Derivation:
        pos = 0

        def build() -> Derivation:
            nonlocal pos
            it, b = int(items[pos]), int(bps[pos])
            pos += 1
            start, end, cat = self.items[it]
            rule, _ = self.bp_meta[b]
            if rule.kind == Kind.LEX:
                return Derivation(cat, start, end, LEX, (), tokens[start])
            kids = [build()]
            if self.bp_right[b] >= 0:
                kids.append(build())
            return Derivation(cat, start, end, rule, tuple(kids))

        return build()


def compile_chart(chart: PackedChart, rule_ids: dict, cat_ids: dict,
                  goal: Category | None = None) -> CompiledChart | None:
    """Compile the part of ``chart`` reachable from the goal item.

    ``rule_ids`` maps (parent, combinator, argument) to an integer and
    ``cat_ids`` maps categories to integers; both are extended in place with
    any keys seen for the first time. Returns None when the goal is absent.
    """
    root = chart.root(goal)
    if root is None:
        return None
    reachable: set[int] = set()
    stack = [root]
    while stack:
        item = stack.pop()
        if id(item) in reachable:
            continue
        reachable.add(id(item))
        for bp in item.backpointers:
            if bp.left is not None:
                stack.append(bp.left)
            if bp.right is not None:
                stack.append(bp.right)
    order = [item for item in chart.items() if id(item) in reachable]
    pos = {id(item): i for i, item in enumerate(order)}
    ptr = [0]
    left, right, rule_col, leafcat, leafpos, meta = [], [], [], [], [], []
    for item in order:
        cid = cat_ids.setdefault(item.cat, len(cat_ids))
        for bp in item.backpointers:
            left.append(pos[id(bp.left)] if bp.left is not None else -1)
            right.append(pos[id(bp.right)] if bp.right is not None else -1)
            if bp.rule.kind == Kind.LEX:
                rule_col.append(-1)
                leafcat.append(cid)
                leafpos.append(item.start)
            else:
                key = (item.cat, bp.rule, bp.arg)
                rule_col.append(rule_ids.setdefault(key, len(rule_ids)))
                leafcat.append(-1)
                leafpos.append(-1)
            meta.append((bp.rule, bp.arg))
        ptr.append(len(left))
    i64 = np.int64
    return CompiledChart(
        n=chart.n,
        items=[(it.start, it.end, it.cat) for it in order],
        item_cat=np.array([cat_ids[it.cat] for it in order], dtype=i64),
        item_ptr=np.array(ptr, dtype=i64),
        bp_left=np.array(left, dtype=i64),
        bp_right=np.array(right, dtype=i64),
        bp_rule=np.array(rule_col, dtype=i64),
        bp_leafcat=np.array(leafcat, dtype=i64),
        bp_pos=np.array(leafpos, dtype=i64),
        bp_meta=meta,
        root=pos[id(root)],
    )
