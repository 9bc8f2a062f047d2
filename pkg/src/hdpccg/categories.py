"""CCG syntactic categories and the combinator algebra over them.

Categories are interned: two structurally equal categories are the same
object, so ``==`` and hashing are identity based and cheap. Canonical
printing parenthesises a complex result only when its slash differs from the
enclosing one (``S/NP/NP`` but ``(S\\NP)/NP``); complex arguments are always
parenthesised. Parsing accepts any well-bracketed form, with slashes
associating to the left.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import CategorySyntaxError, ConfigError, LimitError

FORWARD = "/"
BACKWARD = "\\"

DEFAULT_ATOMS = ("S", "N", "NP", "Conj")


class Category:
    __slots__ = ("atom", "result", "slash", "arg", "depth", "arity", "text", "__weakref__")

    atom: str | None
    result: "Category | None"
    slash: str | None
    arg: "Category | None"
    depth: int
    arity: int
    text: str

    def __setattr__(self, name, value):
        raise AttributeError("Category is immutable")

    def __repr__(self):
        return f"Category({self.text!r})"

    def __str__(self):
        return self.text

    def __reduce__(self):
        if self.atom is not None:
            return (atom, (self.atom,))
        return (functor, (self.result, self.slash, self.arg))

    @property
    def is_atomic(self) -> bool:
        return self.atom is not None

    @property
    def is_forward(self) -> bool:
        return self.slash == FORWARD

    @property
    def is_backward(self) -> bool:
        return self.slash == BACKWARD

    def subcategories(self) -> Iterator["Category"]:
        yield self
        if self.atom is None:
            yield from self.result.subcategories()
            yield from self.arg.subcategories()

    def atoms(self) -> set[str]:
        return {c.atom for c in self.subcategories() if c.atom is not None}


_INTERN: dict[tuple, Category] = {}


def _new(**fields) -> Category:
    obj = object.__new__(Category)
    for k, v in fields.items():
        object.__setattr__(obj, k, v)
    return obj


def atom(name: str) -> Category:
    key = (name,)
    cat = _INTERN.get(key)
    if cat is None:
        cat = _new(atom=name, result=None, slash=None, arg=None, depth=0, arity=0, text=name)
        cat = _INTERN.setdefault(key, cat)
    return cat


def functor(result: Category, slash: str, arg: Category) -> Category:
    key = (result, slash, arg)
    cat = _INTERN.get(key)
    if cat is None:
        if slash not in (FORWARD, BACKWARD):
            raise ValueError(f"bad slash {slash!r}")
        res_text = result.text if result.atom is not None or result.slash == slash else f"({result.text})"
        arg_text = arg.text if arg.atom is not None else f"({arg.text})"
        cat = _new(
            atom=None,
            result=result,
            slash=slash,
            arg=arg,
            depth=1 + max(result.depth, arg.depth),
            arity=1 + result.arity,
            text=res_text + slash + arg_text,
        )
        cat = _INTERN.setdefault(key, cat)
    return cat


def fwd(result: Category, arg: Category) -> Category:
    return functor(result, FORWARD, arg)


def bwd(result: Category, arg: Category) -> Category:
    return functor(result, BACKWARD, arg)


S = atom("S")
N = atom("N")
NP = atom("NP")
CONJ = atom("Conj")


def cat_key(cat: Category) -> str:
    """Sort key giving the deterministic canonical-string order."""
    return cat.text


# -- notation ---------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z][A-Za-z0-9_]*)|([/\\()]))")


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise CategorySyntaxError(f"unexpected character {text[pos]!r} at {pos} in {text!r}")
        tokens.append(m.group(1) or m.group(2))
        pos = m.end()
    return tokens


def parse_category(text: str, config: "RuleConfig | None" = None) -> Category:
    """Parse category notation such as ``(S\\NP)/NP``.

    Atoms must belong to ``config.atoms``; the result must satisfy the
    configured depth and arity caps.
    """
    config = config or DEFAULT_RULES
    tokens = _tokenize(text)
    if not tokens:
        raise CategorySyntaxError("empty category")
    pos = 0

    def term() -> Category:
        nonlocal pos
        if pos >= len(tokens):
            raise CategorySyntaxError(f"unexpected end of {text!r}")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            inner = expr()
            if pos >= len(tokens) or tokens[pos] != ")":
                raise CategorySyntaxError(f"unbalanced parentheses in {text!r}")
            pos += 1
            return inner
        if tok in ("/", "\\", ")"):
            raise CategorySyntaxError(f"unexpected {tok!r} in {text!r}")
        if tok not in config.atoms:
            raise CategorySyntaxError(f"unknown atom {tok!r} in {text!r}")
        return atom(tok)

    def expr() -> Category:
        nonlocal pos
        cat = term()
        while pos < len(tokens) and tokens[pos] in ("/", "\\"):
            slash = tokens[pos]
            pos += 1
            cat = functor(cat, slash, term())
        return cat

    cat = expr()
    if pos != len(tokens):
        raise CategorySyntaxError(f"trailing {tokens[pos]!r} in {text!r}")
    check_limits(cat, config)
    return cat


def print_category(cat: Category) -> str:
    return cat.text


# -- combinators ------------------------------------------------------------


class Kind(enum.IntEnum):
    """Combinator kinds; the integer value is the deterministic tie-break order."""

    FWD_APP = 0
    BWD_APP = 1
    FWD_COMP = 2
    BWD_COMP = 3
    FWD_XCOMP = 4
    BWD_XCOMP = 5
    FWD_COMP2 = 6
    BWD_COMP2 = 7
    FWD_RAISE = 8
    BWD_RAISE = 9
    LEX = 10

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "Kind":
        try:
            return _BY_LABEL[label]
        except KeyError:
            raise ConfigError(f"unknown combinator kind {label!r}") from None

    @property
    def is_raise(self) -> bool:
        return self in (Kind.FWD_RAISE, Kind.BWD_RAISE)

    @property
    def is_binary(self) -> bool:
        return self < Kind.FWD_RAISE


_LABELS = {
    Kind.FWD_APP: "FwdApp",
    Kind.BWD_APP: "BwdApp",
    Kind.FWD_COMP: "FwdComp",
    Kind.BWD_COMP: "BwdComp",
    Kind.FWD_XCOMP: "FwdXComp",
    Kind.BWD_XCOMP: "BwdXComp",
    Kind.FWD_COMP2: "FwdComp2",
    Kind.BWD_COMP2: "BwdComp2",
    Kind.FWD_RAISE: "FwdRaise",
    Kind.BWD_RAISE: "BwdRaise",
    Kind.LEX: "Lex",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}

APPLICATION = frozenset({Kind.FWD_APP, Kind.BWD_APP})
COMPOSITION = frozenset({Kind.FWD_COMP, Kind.BWD_COMP})
RAISING = frozenset({Kind.FWD_RAISE, Kind.BWD_RAISE})
CROSSED = frozenset({Kind.FWD_XCOMP, Kind.BWD_XCOMP})
GENERALIZED = frozenset({Kind.FWD_COMP2, Kind.BWD_COMP2})


@dataclass(frozen=True)
class Combinator:
    kind: Kind
    target: Category | None = None

    def __post_init__(self):
        if self.kind.is_raise and self.target is None:
            raise ValueError("type-raising needs a target category")
        if not self.kind.is_raise and self.target is not None:
            raise ValueError(f"{self.kind.label} takes no target")

    @property
    def sort_key(self) -> tuple:
        return (int(self.kind), self.target.text if self.target is not None else "")

    @property
    def label(self) -> str:
        if self.target is None:
            return self.kind.label
        return f"{self.kind.label}[{self.target.text}]"

    def __str__(self):
        return self.label


LEX = Combinator(Kind.LEX)
FWD_APP = Combinator(Kind.FWD_APP)
BWD_APP = Combinator(Kind.BWD_APP)
FWD_COMP = Combinator(Kind.FWD_COMP)
BWD_COMP = Combinator(Kind.BWD_COMP)


def fwd_raise(target: Category) -> Combinator:
    return Combinator(Kind.FWD_RAISE, target)


def bwd_raise(target: Category) -> Combinator:
    return Combinator(Kind.BWD_RAISE, target)


def parse_combinator(label: str, config: "RuleConfig | None" = None) -> Combinator:
    m = re.fullmatch(r"(\w+)(?:\[(.+)\])?", label.strip())
    if m is None:
        raise CategorySyntaxError(f"bad combinator label {label!r}")
    kind = Kind.from_label(m.group(1))
    target = parse_category(m.group(2), config) if m.group(2) else None
    return Combinator(kind, target)


@dataclass(frozen=True)
class RuleConfig:
    kinds: frozenset = frozenset(APPLICATION | COMPOSITION | RAISING)
    raise_targets: tuple = (S,)
    raisable: tuple = (NP, N)
    max_depth: int = 4
    max_arity: int = 3
    atoms: tuple = DEFAULT_ATOMS
    _combinators: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        kinds = frozenset(Kind(k) for k in self.kinds)
        object.__setattr__(self, "kinds", kinds)
        if Kind.LEX in kinds:
            raise ConfigError("Lex is implicit at chart leaves and cannot be enabled as a rule")
        if self.max_depth < 0 or self.max_arity < 0:
            raise ConfigError("depth and arity caps must be nonnegative")
        if kinds & RAISING and not self.raise_targets:
            raise ConfigError("type-raising enabled but raise_targets is empty")
        raisable = set(self.raisable)
        for kind in kinds & RAISING:
            for target in self.raise_targets:
                for y in self.raisable:
                    out = _raise_result(kind, target, y)
                    if out in raisable:
                        raise ConfigError(f"raise output {out} is itself raisable; chains are not allowed")
        combos = []
        for kind in sorted(kinds):
            if kind.is_raise:
                combos.extend(Combinator(kind, t) for t in sorted(self.raise_targets, key=cat_key))
            else:
                combos.append(Combinator(kind))
        object.__setattr__(self, "_combinators", tuple(combos))

    @classmethod
    def from_names(cls, kinds: Iterable[str] = ("FwdApp", "BwdApp", "FwdComp", "BwdComp", "FwdRaise", "BwdRaise"),
                   raise_targets: Iterable[str] = ("S",), raisable: Iterable[str] = ("NP", "N"),
                   max_depth: int = 4, max_arity: int = 3, atoms: Iterable[str] = DEFAULT_ATOMS) -> "RuleConfig":
        atoms = tuple(atoms)
        loose = RuleConfig(kinds=frozenset(), raise_targets=(), raisable=(), max_depth=max_depth + 2,
                           max_arity=max_arity + 2, atoms=atoms)
        return cls(
            kinds=frozenset(Kind.from_label(k) for k in kinds),
            raise_targets=tuple(parse_category(t, loose) for t in raise_targets),
            raisable=tuple(parse_category(t, loose) for t in raisable),
            max_depth=max_depth,
            max_arity=max_arity,
            atoms=atoms,
        )

    def to_names(self) -> dict:
        return {
            "kinds": [k.label for k in sorted(self.kinds)],
            "raise_targets": [c.text for c in self.raise_targets],
            "raisable": [c.text for c in self.raisable],
            "max_depth": self.max_depth,
            "max_arity": self.max_arity,
            "atoms": list(self.atoms),
        }

    def combinators(self) -> tuple:
        """Enabled combinators (raise kinds expanded per target) in tie-break order."""
        return self._combinators

    def binary_combinators(self) -> tuple:
        return tuple(c for c in self._combinators if c.kind.is_binary)

    def raise_combinators(self) -> tuple:
        return tuple(c for c in self._combinators if c.kind.is_raise)

    def with_limits(self, max_depth: int | None = None, max_arity: int | None = None) -> "RuleConfig":
        return RuleConfig(self.kinds, self.raise_targets, self.raisable,
                          self.max_depth if max_depth is None else max_depth,
                          self.max_arity if max_arity is None else max_arity, self.atoms)



def within_limits(cat: Category, config: RuleConfig) -> bool:
    return cat.depth <= config.max_depth and cat.arity <= config.max_arity


def check_limits(cat: Category, config: RuleConfig) -> Category:
    if cat.depth > config.max_depth:
        raise LimitError(f"{cat} has depth {cat.depth} > {config.max_depth}")
    if cat.arity > config.max_arity:
        raise LimitError(f"{cat} has arity {cat.arity} > {config.max_arity}")
    return cat


def _raise_result(kind: Kind, target: Category, y: Category) -> Category:
    if kind == Kind.FWD_RAISE:
        return fwd(target, bwd(target, y))
    return bwd(target, fwd(target, y))


def _schema(kind: Kind, left: Category, right: Category) -> Category | None:
    if kind == Kind.FWD_APP:
        # X/Y  Y => X
        if left.slash == FORWARD and left.arg is right:
            return left.result
    elif kind == Kind.BWD_APP:
        # Y  X\Y => X
        if right.slash == BACKWARD and right.arg is left:
            return right.result
    elif kind == Kind.FWD_COMP:
        # X/Y  Y/Z => X/Z
        if left.slash == FORWARD and right.slash == FORWARD and left.arg is right.result:
            return fwd(left.result, right.arg)
    elif kind == Kind.BWD_COMP:
        # Y\Z  X\Y => X\Z
        if left.slash == BACKWARD and right.slash == BACKWARD and right.arg is left.result:
            return bwd(right.result, left.arg)
    elif kind == Kind.FWD_XCOMP:
        # X/Y  Y\Z => X\Z
        if left.slash == FORWARD and right.slash == BACKWARD and left.arg is right.result:
            return bwd(left.result, right.arg)
    elif kind == Kind.BWD_XCOMP:
        # Y/Z  X\Y => X/Z
        if left.slash == FORWARD and right.slash == BACKWARD and right.arg is left.result:
            return fwd(right.result, left.arg)
    elif kind == Kind.FWD_COMP2:
        # X/Y  (Y/Z)/W => (X/Z)/W
        inner = right.result
        if (left.slash == FORWARD and right.slash == FORWARD and inner is not None
                and inner.slash == FORWARD and left.arg is inner.result):
            return fwd(fwd(left.result, inner.arg), right.arg)
    elif kind == Kind.BWD_COMP2:
        # (Y\Z)\W  X\Y => (X\Z)\W
        inner = left.result
        if (left.slash == BACKWARD and right.slash == BACKWARD and inner is not None
                and inner.slash == BACKWARD and right.arg is inner.result):
            return bwd(bwd(right.result, inner.arg), left.arg)
    return None


def combine(rule: Combinator, left: Category, right: Category | None = None,
            config: RuleConfig | None = None) -> Category | None:
    """Apply ``rule`` to the child categories.

    Returns the parent category, or None when the schema does not match.
    Raises LimitError when the schema matches but the result breaks the caps.
    """
    config = config or DEFAULT_RULES
    kind = rule.kind
    if kind == Kind.LEX:
        raise ValueError("Lex is not a combining rule")
    if kind.is_raise:
        if right is not None:
            raise ValueError("type-raising is unary")
        out = _raise_result(kind, rule.target, left)
    else:
        if right is None:
            raise ValueError(f"{kind.label} needs two categories")
        out = _schema(kind, left, right)
        if out is None:
            return None
    return check_limits(out, config)


def argument_of(rule: Combinator, left: Category, right: Category | None) -> Category:
    """The category a combination consumes: Y in every schema above."""
    kind = rule.kind
    if kind in (Kind.FWD_APP,):
        return right
    if kind == Kind.BWD_APP:
        return left
    if kind in (Kind.FWD_COMP, Kind.FWD_XCOMP, Kind.FWD_COMP2):
        return left.arg
    if kind in (Kind.BWD_COMP, Kind.BWD_XCOMP, Kind.BWD_COMP2):
        return right.arg
    if kind.is_raise:
        return left
    raise ValueError("Lex has no argument")


def _children(kind: Kind, parent: Category, y: Category) -> tuple[Category, Category] | None:
    if kind == Kind.FWD_APP:
        return fwd(parent, y), y
    if kind == Kind.BWD_APP:
        return y, bwd(parent, y)
    if kind == Kind.FWD_COMP and parent.slash == FORWARD:
        return fwd(parent.result, y), fwd(y, parent.arg)
    if kind == Kind.BWD_COMP and parent.slash == BACKWARD:
        return bwd(y, parent.arg), bwd(parent.result, y)
    if kind == Kind.FWD_XCOMP and parent.slash == BACKWARD:
        return fwd(parent.result, y), bwd(y, parent.arg)
    if kind == Kind.BWD_XCOMP and parent.slash == FORWARD:
        return fwd(y, parent.arg), bwd(parent.result, y)
    if kind == Kind.FWD_COMP2 and parent.slash == FORWARD and parent.result.slash == FORWARD:
        x_z, w = parent.result, parent.arg
        return fwd(x_z.result, y), fwd(fwd(y, x_z.arg), w)
    if kind == Kind.BWD_COMP2 and parent.slash == BACKWARD and parent.result.slash == BACKWARD:
        x_z, w = parent.result, parent.arg
        return bwd(bwd(y, x_z.arg), w), bwd(x_z.result, y)
    return None


def expansion_children(rule: Combinator, parent: Category, y: Category) -> tuple | None:
    """Children that ``rule`` combines into ``parent`` when consuming ``y``.

    Raises have the single child ``y``; None when the shapes cannot match.
    """
    if rule.kind.is_raise:
        return (y,) if _raise_result(rule.kind, rule.target, y) is parent else None
    return _children(rule.kind, parent, y)


def enumerate_expansions(parent: Category, rules: RuleConfig,
                         arg_pool: Iterable[Category]) -> list[tuple[Combinator, Category, Category, Category | None]]:
    """Invert the combinators: every (rule, argument, left, right) producing ``parent``.

    Binary kinds yield one child pair per argument in ``arg_pool``; raise
    kinds yield the single raisable input when ``parent`` has raised shape.
    Child pairs breaking the caps are dropped.
    """
    pool = sorted(set(arg_pool), key=cat_key)
    out = []
    for rule in rules.combinators():
        kind = rule.kind
        if kind.is_raise:
            t = rule.target
            if kind == Kind.FWD_RAISE:
                ok = parent.slash == FORWARD and parent.result is t and parent.arg.slash == BACKWARD \
                    and parent.arg.result is t
            else:
                ok = parent.slash == BACKWARD and parent.result is t and parent.arg.slash == FORWARD \
                    and parent.arg.result is t
            if not ok:
                continue
            y = parent.arg.arg
            if y in pool and y in rules.raisable and within_limits(y, rules):
                out.append((rule, y, y, None))
            continue
        for y in pool:
            pair = _children(kind, parent, y)
            if pair is None:
                continue
            left, right = pair
            if within_limits(left, rules) and within_limits(right, rules):
                out.append((rule, y, left, right))
    return out


def enumerate_categories(atoms: Iterable[str], max_depth: int) -> list[Category]:
    """Every category over ``atoms`` of depth at most ``max_depth``, by depth then text."""
    levels = [sorted((atom(a) for a in atoms), key=cat_key)]
    seen = list(levels[0])
    for d in range(1, max_depth + 1):
        new = []
        for r in seen:
            for a in seen:
                if max(r.depth, a.depth) == d - 1:
                    new.append(fwd(r, a))
                    new.append(bwd(r, a))
        new.sort(key=cat_key)
        seen = seen + new
    return seen


DEFAULT_RULES = RuleConfig()
