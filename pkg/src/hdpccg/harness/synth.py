"""Synthetic data with known ground truth: HMM tag corpora, corpora from an
explicit CCG, and scene/utterance pairs for grounding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..categories import (
    LEX,
    Category,
    Combinator,
    RuleConfig,
    expansion_children,
    parse_category,
    parse_combinator,
)
from ..chart import Derivation
from ..errors import SpecError
from ..grounding import MODALITIES, Alphabets, Scene, SceneObject

# -- HMM corpus -------------------------------------------------------------


def hmm_corpus(K: int = 5, V: int = 50, n_tokens: int = 2000, seed: int = 0,
               own_block: float = 0.9, trans_conc: float = 0.3, min_len: int = 4, max_len: int = 12):
    """Sentences from a random K-state HMM with block-structured emissions.

    Tag k emits mostly (``own_block``) from its own slice of the vocabulary.
    Returns (sentences, gold tag sequences).
    """
    rng = np.random.default_rng(seed)
    start = rng.dirichlet(np.ones(K))
    trans = rng.dirichlet(np.full(K, trans_conc), size=K)
    blocks = np.array_split(np.arange(V), K)
    emit = np.full((K, V), (1 - own_block) / V)
    for k, block in enumerate(blocks):
        emit[k, block] += own_block * rng.dirichlet(np.ones(len(block)))
    emit /= emit.sum(axis=1, keepdims=True)
    words = [f"w{v:02d}" for v in range(V)]
    sentences, tags = [], []
    total = 0
    while total < n_tokens:
        n = min(int(rng.integers(min_len, max_len + 1)), n_tokens - total)
        z = [int(rng.choice(K, p=start))]
        for _ in range(n - 1):
            z.append(int(rng.choice(K, p=trans[z[-1]])))
        sentences.append([words[int(rng.choice(V, p=emit[k]))] for k in z])
        tags.append(z)
        total += n
    return sentences, tags


# -- CCG corpus -------------------------------------------------------------


@dataclass(frozen=True)
class SynthRule:
    parent: Category
    rule: Combinator
    arg: Category | None  # None for lexical rules
    prob: float
    tag: str | None = None  # lexical rules only

    def label(self) -> str:
        if self.rule == LEX:
            return f"{self.parent.text} -> Lex {self.tag}"
        return f"{self.parent.text} -> {self.rule.label} {self.arg.text}"


@dataclass
class SynthGrammarSpec:
    """Generator grammar: expansions with probabilities per parent, words per
    tag, a length cap, and optional word groundings for scene templates."""

    rules: list
    words: dict  # tag -> list of words
    rule_config: RuleConfig
    max_length: int = 8
    groundings: dict = field(default_factory=dict)  # word -> (modality, symbol)
    alphabets: Alphabets | None = None
    distractors: int = 1

    def by_parent(self) -> dict:
        out: dict = {}
        for r in self.rules:
            out.setdefault(r.parent, []).append(r)
        return out

    def syntactic_rules(self) -> list:
        return [r for r in self.rules if r.rule != LEX]

    def validate(self) -> None:
        for parent, rules in self.by_parent().items():
            total = sum(r.prob for r in rules)
            if abs(total - 1.0) > 1e-9:
                raise SpecError(f"rule probabilities for {parent} sum to {total}, not 1")
            for r in rules:
                if r.prob < 0:
                    raise SpecError(f"negative probability in {r.label()}")
                if r.rule == LEX:
                    if r.tag not in self.words or not self.words[r.tag]:
                        raise SpecError(f"tag {r.tag!r} has no words")
                    continue
                kids = expansion_children(r.rule, parent, r.arg)
                if kids is None:
                    raise SpecError(f"{r.label()} does not match its parent")
                for k in kids:
                    if k not in self.by_parent():
                        raise SpecError(f"{r.label()} produces {k}, which has no rules")
        if S_ROOT not in self.by_parent():
            raise SpecError("grammar has no rules for S")
        self._check_terminates()

    def _check_terminates(self) -> None:
        # mean-offspring matrix of the branching process; it must be subcritical
        cats = list(self.by_parent())
        index = {c: i for i, c in enumerate(cats)}
        M = np.zeros((len(cats), len(cats)))
        for r in self.rules:
            if r.rule == LEX:
                continue
            for k in expansion_children(r.rule, r.parent, r.arg):
                M[index[r.parent], index[k]] += r.prob
        radius = max(abs(np.linalg.eigvals(M))) if len(cats) else 0.0
        if radius >= 1.0 - 1e-12:
            raise SpecError(f"grammar does not terminate with probability 1 (spectral radius {radius:.4f})")

    def expected_length(self) -> float:
        cats = list(self.by_parent())
        index = {c: i for i, c in enumerate(cats)}
        M = np.zeros((len(cats), len(cats)))
        leaves = np.zeros(len(cats))
        for r in self.rules:
            if r.rule == LEX:
                leaves[index[r.parent]] += r.prob
                continue
            for k in expansion_children(r.rule, r.parent, r.arg):
                M[index[r.parent], index[k]] += r.prob
        lengths = np.linalg.solve(np.eye(len(cats)) - M, leaves)
        return float(lengths[index[S_ROOT]])

    def to_dict(self) -> dict:
        return {
            "rules": [{"parent": r.parent.text, "rule": r.rule.label, "arg": r.arg.text if r.arg else None,
                       "tag": r.tag, "prob": r.prob} for r in self.rules],
            "words": self.words,
            "rule_config": self.rule_config.to_names(),
            "max_length": self.max_length,
            "groundings": {w: list(g) for w, g in self.groundings.items()},
            "alphabets": self.alphabets.to_dict() if self.alphabets else None,
            "distractors": self.distractors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthGrammarSpec":
        rc = RuleConfig.from_names(**d["rule_config"])
        rules = []
        for r in d["rules"]:
            rule = parse_combinator(r["rule"], rc)
            arg = parse_category(r["arg"], rc) if r.get("arg") else None
            rules.append(SynthRule(parse_category(r["parent"], rc), rule, arg, float(r["prob"]), r.get("tag")))
        alph = d.get("alphabets")
        return cls(rules, {k: list(v) for k, v in d["words"].items()}, rc, int(d.get("max_length", 8)),
                   {w: (g[0], int(g[1])) for w, g in d.get("groundings", {}).items()},
                   Alphabets(**alph) if alph else None, int(d.get("distractors", 1)))


S_ROOT = parse_category("S")


def default_grammar_spec() -> SynthGrammarSpec:
    """Six syntactic rules over S, N and NP with application only.

    Imperatives with optional sentence adverbs, determiners, stacked
    adjectives and prepositional postmodifiers.
    """
    rc = RuleConfig.from_names(kinds=["FwdApp", "BwdApp"], raise_targets=[], raisable=[],
                               max_depth=2, max_arity=2, atoms=["S", "N", "NP"])

    def c(text):
        return parse_category(text, rc)

    fa, ba = parse_combinator("FwdApp"), parse_combinator("BwdApp")
    rules = [
        SynthRule(c("S"), fa, c("NP"), 0.8),
        SynthRule(c("S"), fa, c("S"), 0.2),
        SynthRule(c("NP"), fa, c("N"), 0.8),
        SynthRule(c("NP"), ba, c("NP"), 0.2),
        SynthRule(c("N"), fa, c("N"), 0.3),
        SynthRule(c("N"), LEX, None, 0.7, "NOUN"),
        SynthRule(c("NP\\NP"), fa, c("NP"), 1.0),
        SynthRule(c("S/NP"), LEX, None, 1.0, "VERB"),
        SynthRule(c("S/S"), LEX, None, 1.0, "ADV"),
        SynthRule(c("NP/N"), LEX, None, 1.0, "DET"),
        SynthRule(c("N/N"), LEX, None, 1.0, "ADJ"),
        SynthRule(c("(NP\\NP)/NP"), LEX, None, 1.0, "PREP"),
    ]
    words = {
        "VERB": ["push", "pull", "lift"],
        "ADV": ["now", "then"],
        "DET": ["the", "a"],
        "ADJ": ["red", "blue", "green", "yellow"],
        "NOUN": ["box", "cup", "ball"],
        "PREP": ["near", "on"],
    }
    groundings = {"push": ("action", 0), "pull": ("action", 1), "lift": ("action", 2),
                  "red": ("color", 0), "blue": ("color", 1), "green": ("color", 2), "yellow": ("color", 3),
                  "near": ("spatial", 0), "on": ("spatial", 1),
                  "box": ("geometry", 0), "cup": ("geometry", 1), "ball": ("geometry", 2)}
    return SynthGrammarSpec(rules, words, rc, 8, groundings, Alphabets(3, 4, 2, 3))


def _generate(spec: SynthGrammarSpec, table: dict, rng, cap: int):
    """One tree from S, or None once it exceeds ``cap`` leaves."""
    n_leaves = 0

    def expand(cat, start):
        nonlocal n_leaves
        rules = table[cat]
        r = rules[int(rng.choice(len(rules), p=[x.prob for x in rules]))]
        if r.rule == LEX:
            n_leaves += 1
            if n_leaves > cap:
                raise _TooLong
            words = spec.words[r.tag]
            word = words[int(rng.integers(len(words)))]
            return Derivation(cat, start, start + 1, LEX, (), word), [r.tag]
        kids, tags, pos = [], [], start
        for k in expansion_children(r.rule, cat, r.arg):
            d, t = expand(k, pos)
            kids.append(d)
            tags.extend(t)
            pos = d.end
        return Derivation(cat, start, pos, r.rule, tuple(kids)), tags

    try:
        return expand(S_ROOT, 0)
    except _TooLong:
        return None


class _TooLong(Exception):
    pass


def _scene_for(words: list, spec: SynthGrammarSpec, rng) -> Scene:
    alph = spec.alphabets
    g = spec.groundings
    action = next((g[w][1] for w in words if g.get(w, ("",))[0] == "action"), int(rng.integers(alph.action)))
    objects, links = [], []
    color = None
    pending_spatial = None
    for w in words:
        kind = g.get(w, (None,))[0]
        if kind == "color" and color is None:
            color = g[w][1]
        elif kind == "geometry":
            c = color if color is not None else int(rng.integers(alph.color))
            objects.append(SceneObject(c, g[w][1], tuple(np.round(rng.uniform(0, 1, 2), 4))))
            color = None
            if pending_spatial is not None and len(objects) >= 2:
                links.append((len(objects) - 2, len(objects) - 1, pending_spatial))
                pending_spatial = None
        elif kind == "spatial":
            pending_spatial = g[w][1]
    for _ in range(spec.distractors):
        objects.append(SceneObject(int(rng.integers(alph.color)), int(rng.integers(alph.geometry)),
                                   tuple(np.round(rng.uniform(0, 1, 2), 4))))
    spatial = {}
    for i in range(len(objects)):
        for j in range(len(objects)):
            if i != j:
                spatial[(i, j)] = int(rng.integers(alph.spatial))
    for i, j, s in links:
        spatial[(i, j)] = s
    return Scene(action, tuple(objects), spatial)


def synth_corpus(spec: SynthGrammarSpec, n: int, rng=None):
    """Sample ``n`` sentences top-down from S, rejecting any longer than the cap.

    Returns (sentences, gold trees, gold tag sequences, scenes); scenes are
    None when the spec declares no groundings.
    """
    spec.validate()
    rng = np.random.default_rng(rng)
    table = spec.by_parent()
    sentences, trees, tags, scenes = [], [], [], []
    attempts = 0
    while len(trees) < n:
        attempts += 1
        if attempts > 1000 * max(n, 1):
            raise SpecError("length cap rejects nearly every sample")
        out = _generate(spec, table, rng, spec.max_length)
        if out is None:
            continue
        tree, tag_seq = out
        words = tree.tokens
        sentences.append(words)
        trees.append(tree)
        tags.append(tag_seq)
        scenes.append(_scene_for(words, spec, rng) if spec.groundings and spec.alphabets else None)
    return sentences, trees, tags, scenes


# -- grounding fixture ------------------------------------------------------

GROUNDING_WORDS = {
    "action": ["push", "pull", "lift"],
    "color": ["red", "blue", "green", "yellow"],
    "spatial": ["near", "on"],
    "geometry": ["box", "cup", "ball"],
}


def grounding_fixture(n_pairs: int = 200, seed: int = 0, distractors: int = 1, spatial_rate: float = 0.6,
                      spatial_symbols: int = 4):
    """Instruction/scene pairs over a 12-word vocabulary with known modalities.

    Sentences follow ``verb color noun [spatial [color] noun]``; each word's
    symbol is its index within its modality. Returns (pairs, gold modality
    per word, alphabets); sentences are tagged with the modality index as tag.
    """
    rng = np.random.default_rng(seed)
    alph = Alphabets(3, 4, spatial_symbols, 3)
    gold = {w: m for m, ws in GROUNDING_WORDS.items() for w in ws}
    tag_of = {m: MODALITIES.index(m) for m in GROUNDING_WORDS}
    pairs = []
    for _ in range(n_pairs):
        verb = int(rng.integers(3))
        color = int(rng.integers(4))
        noun = int(rng.integers(3))
        words = [GROUNDING_WORDS["action"][verb], GROUNDING_WORDS["color"][color], GROUNDING_WORDS["geometry"][noun]]
        objects = [SceneObject(color, noun, tuple(np.round(rng.uniform(0, 1, 2), 4)))]
        link = None
        if rng.random() < spatial_rate:
            rel = int(rng.integers(2))
            lm_noun = int(rng.integers(3))
            lm_color = int(rng.integers(4))
            words.append(GROUNDING_WORDS["spatial"][rel])
            if rng.random() < 0.5:
                words.append(GROUNDING_WORDS["color"][lm_color])
            words.append(GROUNDING_WORDS["geometry"][lm_noun])
            objects.append(SceneObject(lm_color, lm_noun, tuple(np.round(rng.uniform(0, 1, 2), 4))))
            link = (0, 1, rel)
        for _ in range(distractors):
            objects.append(SceneObject(int(rng.integers(4)), int(rng.integers(3)),
                                       tuple(np.round(rng.uniform(0, 1, 2), 4))))
        spatial = {(i, j): int(rng.integers(spatial_symbols)) for i in range(len(objects)) for j in range(len(objects)) if i != j}
        if link:
            spatial[(link[0], link[1])] = link[2]
        tagged = [(w, tag_of[gold[w]]) for w in words]
        pairs.append((tagged, Scene(verb, tuple(objects), spatial)))
    return pairs, gold, alph
