"""Evaluation metrics: unlabeled brackets, tag clusterings, grounding accuracy."""
from __future__ import annotations

import itertools
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from ..chart import Derivation, extract_spans
from ..errors import LengthMismatch


@dataclass
class EvalReport:
    bracket_precision: float | None = None
    bracket_recall: float | None = None
    bracket_f1: float | None = None
    tag_many_to_one: float | None = None
    tag_v_measure: float | None = None
    grounding_modality_accuracy: float | None = None
    counts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self) -> None:
        for name in ("bracket_precision", "bracket_recall", "bracket_f1", "tag_many_to_one",
                     "tag_v_measure", "grounding_modality_accuracy"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        p, r, f = self.bracket_precision, self.bracket_recall, self.bracket_f1
        if f is not None and abs(f - f1_score(p, r)) > 1e-9:
            raise ValueError("bracket F1 inconsistent with precision and recall")


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _spans(tree) -> set:
    if isinstance(tree, Derivation):
        return extract_spans(tree)
    return {tuple(s) for s in tree}


def eval_brackets(pred: Sequence, gold: Sequence) -> dict:
    """Micro-averaged unlabeled P/R/F1.

    Items are derivations or precomputed span sets. A missing prediction
    (None) contributes no predicted spans.
    """
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predicted trees vs {len(gold)} gold trees")
    match = n_pred = n_gold = 0
    for p, g in zip(pred, gold):
        ps = set() if p is None else _spans(p)
        gs = _spans(g)
        match += len(ps & gs)
        n_pred += len(ps)
        n_gold += len(gs)
    precision = match / n_pred if n_pred else (1.0 if n_gold == 0 else 0.0)
    recall = match / n_gold if n_gold else (1.0 if n_pred == 0 else 0.0)
    return {"precision": precision, "recall": recall, "f1": f1_score(precision, recall),
            "matched": match, "predicted": n_pred, "gold": n_gold}


def _flat(seqs):
    if seqs and isinstance(seqs[0], (list, tuple)):
        return [x for s in seqs for x in s]
    return list(seqs)


def _entropy(counts, total) -> float:
    return -sum(c / total * math.log(c / total) for c in counts if c)


def eval_tags(pred: Sequence, gold: Sequence) -> dict:
    """Many-to-one accuracy and V-measure (natural-log entropies).

    Accepts flat token lists or lists of sentences.
    """
    pred, gold = _flat(pred), _flat(gold)
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predicted tags vs {len(gold)} gold tags")
    n = len(pred)
    if n == 0:
        return {"many_to_one": 0.0, "v_measure": 0.0, "tokens": 0}
    joint = Counter(zip(pred, gold))
    by_pred: dict = {}
    for (p, g), c in joint.items():
        by_pred.setdefault(p, Counter())[g] += c
    m2o = sum(max(row.values()) for row in by_pred.values()) / n
    pred_counts = Counter(pred)
    gold_counts = Counter(gold)
    h_c = _entropy(gold_counts.values(), n)
    h_k = _entropy(pred_counts.values(), n)
    h_c_given_k = -sum(c / n * math.log(c / pred_counts[p]) for (p, g), c in joint.items())
    h_k_given_c = -sum(c / n * math.log(c / gold_counts[g]) for (p, g), c in joint.items())
    homogeneity = 1.0 if h_c == 0 else 1.0 - h_c_given_k / h_c
    completeness = 1.0 if h_k == 0 else 1.0 - h_k_given_c / h_k
    v = 0.0 if homogeneity + completeness == 0 else 2 * homogeneity * completeness / (homogeneity + completeness)
    # clamp rounding noise at the ends of [0, 1]
    v = min(1.0, max(0.0, v))
    return {"many_to_one": m2o, "v_measure": v, "homogeneity": homogeneity,
            "completeness": completeness, "tokens": n}


def eval_grounding(predicted: dict, gold: dict) -> dict:
    """Fraction of gold words whose predicted dominant modality is correct."""
    words = sorted(gold)
    if not words:
        return {"accuracy": 0.0, "words": 0}
    hits = sum(1 for w in words if predicted.get(w) == gold[w])
    return {"accuracy": hits / len(words), "words": len(words), "correct": hits}


_ATOM = re.compile(r"[A-Za-z][A-Za-z0-9_]*")


def _relabel(text: str, mapping: dict) -> str:
    return _ATOM.sub(lambda m: mapping.get(m.group(0), m.group(0)), text)


def match_rules(found: Sequence, target: Sequence, atoms: Sequence[str], root: str = "S") -> dict:
    """Which target rules appear among the found ones.

    Rules are (parent, kind, argument) triples of category text. Atom names
    other than the root carry no meaning to an unsupervised learner, so every
    relabeling of the non-root atoms is tried and the one recovering the
    most target rules wins (ties: the identity comes first).
    """
    found = {tuple(r) for r in found}
    target = [tuple(r) for r in target]
    free = [a for a in atoms if a != root]
    best = None
    for perm in itertools.permutations(free):
        mapping = dict(zip(free, perm))
        renamed = {(_relabel(p, mapping), k, _relabel(a, mapping)) for p, k, a in found}
        hits = [r for r in target if r in renamed]
        if best is None or len(hits) > len(best[1]):
            best = (mapping, hits)
    mapping, hits = best
    exact = [r for r in target if r in found]
    return {"matched": len(hits), "total": len(target), "mapping": mapping,
            "missing": [r for r in target if r not in hits], "matched_exact": len(exact)}
