"""Cross-situational grounding of words in quantized perceptual symbols.

Each word type has a Dirichlet-multinomial over five modalities (action,
color, spatial, geometry, none) and, per modality, a Dirichlet-multinomial
over that modality's symbol alphabet. A token either picks a modality and a
symbol present in its paired scene, or picks "none" and carries no symbol.
Both layers are collapsed; the sampler resamples (modality, symbol) jointly
per token.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import AuditError, EmptyScene, MissingScene

MODALITIES = ("action", "color", "spatial", "geometry", "none")
ACTION, COLOR, SPATIAL, GEOMETRY, NONE = range(5)
N_SYMBOLIC = 4


@dataclass(frozen=True)
class Alphabets:
    action: int
    color: int
    spatial: int
    geometry: int

    def sizes(self) -> tuple:
        return (self.action, self.color, self.spatial, self.geometry)

    def to_dict(self) -> dict:
        return {"action": self.action, "color": self.color, "spatial": self.spatial, "geometry": self.geometry}


@dataclass(frozen=True)
class SceneObject:
    color_sym: int
    geom_sym: int
    position: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class Scene:
    """One perceptual situation: the action symbol (may be None when the
    action has not been observed), objects, and spatial symbols per ordered
    object pair."""

    action_sym: int | None
    objects: tuple
    spatial: dict = field(default_factory=dict)

    def validate(self, alphabets: Alphabets | None = None) -> None:
        if not self.objects:
            raise EmptyScene("scene has no objects")
        if alphabets is None:
            return
        if self.action_sym is not None and not 0 <= self.action_sym < alphabets.action:
            raise EmptyScene(f"action symbol {self.action_sym} outside its alphabet")
        for o in self.objects:
            if not (0 <= o.color_sym < alphabets.color and 0 <= o.geom_sym < alphabets.geometry):
                raise EmptyScene(f"object symbol outside its alphabet: {o}")
        for (i, j), s in self.spatial.items():
            if i == j or not (0 <= i < len(self.objects) and 0 <= j < len(self.objects)):
                raise EmptyScene(f"spatial pair ({i}, {j}) does not name two objects")
            if not 0 <= s < alphabets.spatial:
                raise EmptyScene(f"spatial symbol {s} outside its alphabet")

    def present(self) -> list[list[int]]:
        """Sorted symbols present per modality (action, color, spatial, geometry)."""
        action = [] if self.action_sym is None else [self.action_sym]
        return [action,
                sorted({o.color_sym for o in self.objects}),
                sorted(set(self.spatial.values())),
                sorted({o.geom_sym for o in self.objects})]

    def to_record(self) -> dict:
        return {
            "action_sym": self.action_sym,
            "objects": [{"color_sym": o.color_sym, "geom_sym": o.geom_sym, "position": list(o.position)}
                        for o in self.objects],
            "spatial": [[i, j, s] for (i, j), s in sorted(self.spatial.items())],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Scene":
        objects = tuple(SceneObject(int(o["color_sym"]), int(o["geom_sym"]), tuple(o.get("position", (0.0, 0.0))))
                        for o in rec["objects"])
        spatial = {(int(i), int(j)): int(s) for i, j, s in rec.get("spatial", [])}
        action = rec.get("action_sym")
        return cls(None if action is None else int(action), objects, spatial)


# -- sampler ----------------------------------------------------------------


@njit(cache=True)
def _sweep(tok_word, tok_pair, mods, syms, mod_counts, sym_counts, phi, theta, sizes,
           present_ptr, present_syms, inv_rate, uniforms):
    n_opt = 1
    for m in range(4):
        n_opt += sizes[m]
    w_opt = np.empty(n_opt)
    m_opt = np.empty(n_opt, dtype=np.int64)
    s_opt = np.empty(n_opt, dtype=np.int64)
    for i in range(tok_word.shape[0]):
        w = tok_word[i]
        p = tok_pair[i]
        m0 = mods[i]
        mod_counts[w, m0] -= 1
        if m0 < 4:
            sym_counts[m0, w, syms[i]] -= 1
        k = 0
        total = 0.0
        for m in range(4):
            lo = present_ptr[p * 4 + m]
            hi = present_ptr[p * 4 + m + 1]
            if lo == hi:
                continue
            base = (mod_counts[w, m] + phi[w, m]) / (mod_counts[w, m] + sizes[m] * theta)
            for q in range(lo, hi):
                s = present_syms[q]
                wt = base * (sym_counts[m, w, s] + theta) * inv_rate[m, s]
                w_opt[k] = wt
                m_opt[k] = m
                s_opt[k] = s
                total += wt
                k += 1
        wt = mod_counts[w, 4] + phi[w, 4]
        w_opt[k] = wt
        m_opt[k] = 4
        s_opt[k] = -1
        total += wt
        k += 1
        u = uniforms[i] * total
        acc = 0.0
        pick = k - 1
        for j in range(k):
            acc += w_opt[j]
            if u < acc:
                pick = j
                break
        m1 = m_opt[pick]
        mods[i] = m1
        syms[i] = s_opt[pick]
        mod_counts[w, m1] += 1
        if m1 < 4:
            sym_counts[m1, w, s_opt[pick]] += 1


@dataclass
class GroundingState:
    alphabets: Alphabets
    vocab: list
    word_ids: dict
    pairs: list  # (tagged sentence, Scene)
    phi: np.ndarray  # W x 5 modality pseudo-counts
    theta: float
    tok_word: np.ndarray
    tok_pair: np.ndarray
    present_ptr: np.ndarray
    present_syms: np.ndarray
    mods: np.ndarray
    syms: np.ndarray
    inv_rate: np.ndarray = None  # 4 x max alphabet: 1 / background presence rate, or ones
    mod_counts: np.ndarray = None
    sym_counts: np.ndarray = None  # 4 x W x max alphabet
    log_joints: list = field(default_factory=list)

    @property
    def sizes(self) -> np.ndarray:
        return np.array(self.alphabets.sizes(), dtype=np.int64)

    def rebuild_counts(self):
        W = len(self.vocab)
        mod_counts = np.zeros((W, 5), dtype=np.int64)
        sym_counts = np.zeros((4, W, max(self.alphabets.sizes())), dtype=np.int64)
        for w, m, s in zip(self.tok_word, self.mods, self.syms):
            mod_counts[w, m] += 1
            if m < 4:
                sym_counts[m, w, s] += 1
        return mod_counts, sym_counts

    def present(self, pair: int, modality: int) -> np.ndarray:
        k = pair * 4 + modality
        return self.present_syms[self.present_ptr[k]:self.present_ptr[k + 1]]


def _word_and_tag(token):
    if isinstance(token, (tuple, list)):
        return token[0], int(token[1])
    return token, 0


def _phi_for(tag, phi_prior) -> np.ndarray:
    if phi_prior is None:
        return np.ones(5)
    if isinstance(phi_prior, dict):
        row = phi_prior.get(tag, phi_prior.get("default", [1.0] * 5))
    else:
        row = phi_prior
    row = np.asarray(row, dtype=float)
    if row.shape != (5,) or not np.all(row > 0):
        raise ValueError("phi_prior rows must hold five positive pseudo-counts")
    return row


def presence_rates(pairs: Sequence, alphabets: Alphabets) -> np.ndarray:
    """Smoothed fraction of scenes in which each symbol is present, per modality."""
    sizes = alphabets.sizes()
    counts = np.zeros((4, max(sizes)))
    for _, scene in pairs:
        for m, present in enumerate(scene.present()):
            counts[m, present] += 1
    return (counts + 1.0) / (len(pairs) + 2.0)


def ground_init(pairs: Sequence, alphabets: Alphabets, phi_prior=None, theta: float = 0.5,
                rng=None, presence_ratio: bool = True) -> GroundingState:
    """Random (modality, present symbol) per token.

    ``pairs`` is a sequence of (tagged sentence, Scene); a tagged sentence is
    a list of (word, tag) tuples or bare words (tag 0). ``phi_prior`` is one
    five-vector or a dict from tag id to five-vector (key "default" for the
    rest); a word type uses the prior of its most frequent tag.

    With ``presence_ratio`` each grounded token is also weighted by the
    inverse of its symbol's background presence rate, so explaining a symbol
    that is almost always in view earns nothing over "none".
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    rng = np.random.default_rng(rng)
    vocab, word_ids, tag_counts = [], {}, []
    tok_word, tok_pair = [], []
    ptr, syms_flat = [0], []
    for p, pair in enumerate(pairs):
        if not isinstance(pair, (tuple, list)) or len(pair) != 2 or pair[1] is None:
            raise MissingScene(f"pair {p} has no scene")
        sentence, scene = pair
        scene.validate(alphabets)
        for m_syms in scene.present():
            syms_flat.extend(m_syms)
            ptr.append(len(syms_flat))
        for tok in sentence:
            word, tag = _word_and_tag(tok)
            if word not in word_ids:
                word_ids[word] = len(vocab)
                vocab.append(word)
                tag_counts.append(Counter())
            wid = word_ids[word]
            tag_counts[wid][tag] += 1
            tok_word.append(wid)
            tok_pair.append(p)
    phi = np.array([_phi_for(min(c, key=lambda t: (-c[t], t)), phi_prior) for c in tag_counts]).reshape(-1, 5)
    state = GroundingState(alphabets, vocab, word_ids, list(pairs), phi, float(theta),
                           np.array(tok_word, dtype=np.int64), np.array(tok_pair, dtype=np.int64),
                           np.array(ptr, dtype=np.int64), np.array(syms_flat, dtype=np.int64),
                           np.zeros(len(tok_word), dtype=np.int64), np.full(len(tok_word), -1, dtype=np.int64))
    state.inv_rate = (1.0 / presence_rates(pairs, alphabets) if presence_ratio
                      else np.ones((4, max(alphabets.sizes()))))
    for i, p in enumerate(state.tok_pair):
        options = [m for m in range(4) if len(state.present(p, m))] + [NONE]
        m = options[rng.integers(len(options))]
        state.mods[i] = m
        if m < 4:
            present = state.present(p, m)
            state.syms[i] = present[rng.integers(len(present))]
    state.mod_counts, state.sym_counts = state.rebuild_counts()
    return state


def ground_audit(state: GroundingState) -> None:
    mod_counts, sym_counts = state.rebuild_counts()
    if not (np.array_equal(mod_counts, state.mod_counts) and np.array_equal(sym_counts, state.sym_counts)):
        raise AuditError("grounding counts disagree with token assignments")
    for i, (p, m, s) in enumerate(zip(state.tok_pair, state.mods, state.syms)):
        if m == NONE:
            if s != -1:
                raise AuditError(f"token {i} has modality none but carries a symbol")
        elif s not in state.present(p, m):
            raise AuditError(f"token {i} grounded to symbol {s} absent from its scene")


def ground_log_joint(state: GroundingState) -> float:
    total = log_joint_from_counts(state.mod_counts, state.sym_counts, state.phi, state.theta, state.alphabets)
    grounded = state.mods < NONE
    return total + float(np.sum(np.log(state.inv_rate[state.mods[grounded], state.syms[grounded]])))


def log_joint_from_counts(mod_counts, sym_counts, phi, theta, alphabets: Alphabets) -> float:
    mod_counts = np.asarray(mod_counts, dtype=float)
    a0 = phi.sum(axis=1)
    total = float(np.sum(gammaln(a0) - gammaln(a0 + mod_counts.sum(axis=1))))
    total += float(np.sum(gammaln(phi + mod_counts) - gammaln(phi)))
    for m, size in enumerate(alphabets.sizes()):
        counts = np.asarray(sym_counts[m][:, :size], dtype=float)
        total += float(np.sum(gammaln(size * theta) - gammaln(size * theta + counts.sum(axis=1))))
        total += float(np.sum(gammaln(theta + counts) - gammaln(theta)))
    return total


def ground_gibbs_sweep(state: GroundingState, rng) -> float:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    uniforms = rng.random(len(state.tok_word))
    _sweep(state.tok_word, state.tok_pair, state.mods, state.syms, state.mod_counts, state.sym_counts,
           state.phi, state.theta, state.sizes, state.present_ptr, state.present_syms, state.inv_rate, uniforms)
    lj = ground_log_joint(state)
    state.log_joints.append(lj)
    return lj


def ground_train(pairs, alphabets, phi_prior=None, theta=0.5, sweeps=500, seed=0, audit_every=0,
                 presence_ratio=True):
    rng = np.random.default_rng(seed)
    state = ground_init(pairs, alphabets, phi_prior, theta, rng, presence_ratio)
    for it in range(1, sweeps + 1):
        ground_gibbs_sweep(state, rng)
        if audit_every and it % audit_every == 0:
            ground_audit(state)
    return state


# -- lexicon and resolution -------------------------------------------------


@dataclass(frozen=True)
class GroundedLexiconEntry:
    word: str
    modality: str
    symbols: tuple  # predictive over the dominant modality's alphabet; (1.0,) for "none"
    confidence: float
    modality_posterior: tuple
    count: int

    def to_record(self) -> dict:
        return {"word": self.word, "modality": self.modality, "symbols": list(self.symbols),
                "confidence": self.confidence, "modality_posterior": list(self.modality_posterior),
                "count": self.count}

    @classmethod
    def from_record(cls, rec: dict) -> "GroundedLexiconEntry":
        if rec["modality"] not in MODALITIES:
            raise ValueError(f"unknown modality {rec['modality']!r}")
        return cls(rec["word"], rec["modality"], tuple(float(x) for x in rec["symbols"]),
                   float(rec["confidence"]), tuple(float(x) for x in rec["modality_posterior"]), int(rec["count"]))


def modality_posterior(state: GroundingState, wid: int) -> np.ndarray:
    row = state.mod_counts[wid] + state.phi[wid]
    return row / row.sum()


def symbol_predictive(state: GroundingState, wid: int, modality: int) -> np.ndarray:
    size = state.alphabets.sizes()[modality]
    counts = state.sym_counts[modality, wid, :size]
    return (counts + state.theta) / (counts.sum() + size * state.theta)


def grounded_lexicon(state: GroundingState) -> list[GroundedLexiconEntry]:
    out = []
    for word in sorted(state.vocab):
        wid = state.word_ids[word]
        post = modality_posterior(state, wid)
        # argmax returns the first maximum, which is the modality order tie rule
        m = int(np.argmax(post))
        symbols = (1.0,) if m == NONE else tuple(float(x) for x in symbol_predictive(state, wid, m))
        out.append(GroundedLexiconEntry(word, MODALITIES[m], symbols, float(post[m]),
                                        tuple(float(x) for x in post), int(state.mod_counts[wid].sum())))
    return out


def _argmax(scores: list[float]) -> tuple[int | None, bool]:
    if not scores:
        return None, False
    best = max(scores)
    winners = [i for i, s in enumerate(scores) if s == best]
    return winners[0], len(winners) > 1


def resolve_instruction(sentence: Sequence, scene: Scene, state: GroundingState | None = None,
                        lexicon: list[GroundedLexiconEntry] | None = None) -> dict:
    """Map an instruction to (action, referent, referent_color, landmark).

    Needs a trained state or its grounded lexicon. Words are classed by their
    dominant modality; unknown words are ignored. The referent is scored by
    color and geometry words before the first spatial word, the landmark by
    the spatial words (relative to the referent) and the descriptor words
    after that. Ties go to the lowest index and are reported under
    "ambiguous".
    """
    if lexicon is None:
        if state is None:
            raise ValueError("resolve_instruction needs a state or a lexicon")
        lexicon = grounded_lexicon(state)
    entries = {e.word: e for e in lexicon}
    dominant = {w: MODALITIES.index(e.modality) for w, e in entries.items()}
    words = [_word_and_tag(t)[0] for t in sentence]
    classed = [(w, dominant[w]) for w in words if w in dominant]

    def loglik(word, modality, sym):
        # only dominant-modality words are ever scored, so the entry's
        # predictive is the right distribution
        symbols = entries[word].symbols
        if sym is None or sym >= len(symbols) or symbols[sym] <= 0:
            return -math.inf
        return math.log(symbols[sym])

    ambiguous = []
    action_words = [w for w, m in classed if m == ACTION]
    action = None
    if action_words:
        n_actions = len(entries[action_words[0]].symbols)
        candidates = [scene.action_sym] if scene.action_sym is not None else list(range(n_actions))
        scores = [sum(loglik(w, ACTION, a) for w in action_words) for a in candidates]
        idx, tie = _argmax(scores)
        action = candidates[idx]
        if tie:
            ambiguous.append("action")

    first_spatial = next((i for i, (_, m) in enumerate(classed) if m == SPATIAL), None)
    head = classed if first_spatial is None else classed[:first_spatial]
    tail = [] if first_spatial is None else classed[first_spatial:]

    def describe(obj, ws):
        s = 0.0
        for w, m in ws:
            if m == COLOR:
                s += loglik(w, COLOR, obj.color_sym)
            elif m == GEOMETRY:
                s += loglik(w, GEOMETRY, obj.geom_sym)
        return s

    referent = None
    descriptors = [(w, m) for w, m in head if m in (COLOR, GEOMETRY)]
    if descriptors:
        referent, tie = _argmax([describe(o, descriptors) for o in scene.objects])
        if tie:
            ambiguous.append("referent")

    landmark = None
    if tail:
        spatial_words = [w for w, m in tail if m == SPATIAL]
        after = [(w, m) for w, m in tail if m in (COLOR, GEOMETRY)]
        cands = [j for j in range(len(scene.objects)) if j != referent]
        scores = []
        for j in cands:
            s = describe(scene.objects[j], after)
            if referent is not None:
                s += sum(loglik(w, SPATIAL, scene.spatial.get((referent, j))) for w in spatial_words)
            scores.append(s)
        idx, tie = _argmax(scores)
        if idx is not None:
            landmark = cands[idx]
            if tie:
                ambiguous.append("landmark")

    return {
        "action": action,
        "referent": referent,
        "referent_color": None if referent is None else scene.objects[referent].color_sym,
        "landmark": landmark,
        "ambiguous": ambiguous,
    }
