"""File formats.

Machine outputs are JSON lines: the first line is a header carrying
``format_version`` and ``kind``, every later line is one record. Errors name
the file and the 1-based line number.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..categories import RuleConfig
from ..chart import Derivation
from ..errors import DataError, EmptyCorpus, EmptyScene, IoError
from ..grounding import Alphabets, Scene, SceneObject
from .quantize import quantize_features

FORMAT_VERSION = 1


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise IoError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for block in iter(lambda: f.read(1 << 16), b""):
                h.update(block)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None
    return h.hexdigest()


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, no spaces, so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# -- plain text ----------------------------------------------------------------

def load_corpus(path, lowercase: bool = False) -> list[list[str]]:
    """One whitespace-tokenized sentence per line; blank lines are skipped."""
    sentences = []
    for line in _read_text(path).splitlines():
        tokens = line.split()
        if tokens:
            sentences.append([t.lower() for t in tokens] if lowercase else tokens)
    if not sentences:
        raise EmptyCorpus(f"{path}: no sentences")
    return sentences


def write_corpus(path, sentences) -> None:
    write_text(path, "".join(" ".join(s) + "\n" for s in sentences))


def load_tagged_text(path) -> list[list[tuple[str, str]]]:
    """``word/tag`` tokens; the tag is whatever follows the last slash."""
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        sent = []
        for tok in tokens:
            word, sep, tag = tok.rpartition("/")
            if not sep or not word or not tag:
                raise DataError(f"{path}:{lineno}: token {tok!r} is not word/tag")
            sent.append((word, tag))
        out.append(sent)
    if not out:
        raise EmptyCorpus(f"{path}: no sentences")
    return out


def write_tagged_text(path, tagged) -> None:
    write_text(path, "".join(" ".join(f"{w}/{t}" for w, t in s) + "\n" for s in tagged))


# -- JSON lines ----------------------------------------------------------------

def write_records(path, kind: str, records, **header) -> None:
    head = {"format_version": FORMAT_VERSION, "kind": kind, **header}
    write_text(path, "".join(dumps(r) + "\n" for r in [head, *records]))


def read_records(path, kind: str) -> tuple[dict, list[tuple[int, object]]]:
    """Header and (line number, record) pairs of a JSON-lines file."""
    lines = _read_text(path).splitlines()
    rows = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rows.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    if not rows:
        raise DataError(f"{path}: empty file, expected a header line")
    lineno, head = rows[0]
    if not isinstance(head, dict) or head.get("kind") != kind:
        raise DataError(f"{path}:{lineno}: expected a {kind!r} header")
    if head.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}:{lineno}: unsupported format_version {head.get('format_version')!r}")
    return head, rows[1:]


def write_json(path, obj) -> None:
    write_text(path, dumps(obj) + "\n")


def read_json(path, kind: str) -> dict:
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise DataError(f"{path}: expected a {kind!r} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    return doc


# -- tagged corpus -------------------------------------------------------------

def write_tagged(path, sentences, tags, tagset) -> None:
    """Tokens with tag ids; ``tagset`` names the ids (index = id)."""
    write_records(path, "tagged", ({"tokens": list(s), "tags": [int(t) for t in ts]}
                                   for s, ts in zip(sentences, tags)), tagset=list(tagset))


def read_tagged(path) -> tuple[list, list, list]:
    head, rows = read_records(path, "tagged")
    tagset = head.get("tagset")
    if not isinstance(tagset, list) or not tagset:
        raise DataError(f"{path}:1: header lacks a tagset")
    sentences, tags = [], []
    for lineno, rec in rows:
        try:
            toks, ts = rec["tokens"], [int(t) for t in rec["tags"]]
        except (TypeError, KeyError, ValueError):
            raise DataError(f"{path}:{lineno}: expected tokens and tags") from None
        if len(toks) != len(ts) or not toks:
            raise DataError(f"{path}:{lineno}: tokens and tags differ in length or are empty")
        if any(not 0 <= t < len(tagset) for t in ts):
            raise DataError(f"{path}:{lineno}: tag id outside the tagset")
        sentences.append([str(t) for t in toks])
        tags.append(ts)
    if not sentences:
        raise EmptyCorpus(f"{path}: no sentences")
    return sentences, tags, tagset


# -- scenes --------------------------------------------------------------------

def write_scenes(path, scenes, alphabets: Alphabets) -> None:
    """One record per sentence; null marks a sentence without a scene."""
    write_records(path, "scenes", (None if s is None else s.to_record() for s in scenes),
                  alphabets=alphabets.to_dict(), encoding="symbols")


def _symbol_scene(rec, alphabets: Alphabets) -> Scene:
    scene = Scene.from_record(rec)
    scene.validate(alphabets)
    return scene


def _vector(x, what):
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{what} must be a nonempty list of numbers")
    return v


def _feature_scenes(rows, alphabets: Alphabets, seed: int, path) -> list:
    """Quantize raw feature records per modality over the whole file.

    Records hold ``action`` (a vector or null) and ``objects`` with ``color``,
    ``shape`` and ``position`` vectors; spatial features are position offsets
    between ordered object pairs.
    """
    parsed, actions, colors, shapes, offsets = [], [], [], [], []
    for lineno, rec in rows:
        if rec is None:
            parsed.append(None)
            continue
        try:
            objs = rec["objects"]
            if not objs:
                raise EmptyScene("scene has no objects")
            act = None if rec.get("action") is None else _vector(rec["action"], "action")
            pos = [_vector(o["position"], "position") for o in objs]
            col = [_vector(o["color"], "color") for o in objs]
            shp = [_vector(o["shape"], "shape") for o in objs]
        except (TypeError, KeyError, ValueError, EmptyScene) as exc:
            raise DataError(f"{path}:{lineno}: bad feature scene ({exc})") from None
        parsed.append((lineno, act, pos, len(colors), len(offsets)))
        if act is not None:
            actions.append(act)
        colors.extend(col)
        shapes.extend(shp)
        offsets.extend(pos[j] - pos[i] for i in range(len(pos)) for j in range(len(pos)) if i != j)

    def quantize(rows_, k, what, offset):
        if not rows_:
            return []
        try:
            ids, _ = quantize_features(rows_, k, seed + offset)
        except DataError as exc:
            raise DataError(f"{path}: {what} features: {exc}") from None
        return list(ids)

    a_ids = iter(quantize(actions, alphabets.action, "action", 0))
    c_ids = quantize(colors, alphabets.color, "color", 1)
    g_ids = quantize(shapes, alphabets.geometry, "shape", 2)
    s_ids = quantize(offsets, alphabets.spatial, "spatial", 3)
    scenes = []
    for item in parsed:
        if item is None:
            scenes.append(None)
            continue
        _, act, pos, c0, s0 = item
        n = len(pos)
        objects = tuple(SceneObject(int(c_ids[c0 + i]), int(g_ids[c0 + i]), tuple(float(x) for x in pos[i]))
                        for i in range(n))
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        spatial = {p: int(s_ids[s0 + q]) for q, p in enumerate(pairs)}
        scenes.append(Scene(None if act is None else int(next(a_ids)), objects, spatial))
    return scenes


def read_scenes(path, seed: int = 0, alphabets: Alphabets | None = None) -> tuple[list, Alphabets]:
    """Scene records aligned with corpus lines.

    Symbol files must declare their alphabets in the header. Feature files
    may leave them out, in which case ``alphabets`` (the configured sizes)
    sets the number of k-means symbols per modality.
    """
    head, rows = read_records(path, "scenes")
    try:
        if "alphabets" in head or alphabets is None or head.get("encoding", "symbols") != "features":
            alphabets = Alphabets(**head["alphabets"])
        if not all(isinstance(v, int) and v > 0 for v in alphabets.sizes()):
            raise ValueError
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{path}:1: header must declare positive alphabet sizes") from None
    encoding = head.get("encoding", "symbols")
    if encoding == "features":
        return _feature_scenes(rows, alphabets, seed, path), alphabets
    if encoding != "symbols":
        raise DataError(f"{path}:1: unknown encoding {encoding!r}")
    scenes = []
    for lineno, rec in rows:
        if rec is None:
            scenes.append(None)
            continue
        try:
            scenes.append(_symbol_scene(rec, alphabets))
        except (TypeError, KeyError, ValueError, EmptyScene) as exc:
            raise DataError(f"{path}:{lineno}: bad scene record ({exc})") from None
    return scenes, alphabets


# -- trees ---------------------------------------------------------------------

def write_trees(stem, trees, rules: RuleConfig) -> tuple[Path, Path]:
    """``stem.txt`` holds bracketed trees (``(NOPARSE)`` for failures),
    ``stem.jsonl`` the structured records (null for failures)."""
    stem = Path(stem)
    txt, jsonl = stem.with_suffix(".txt"), stem.with_suffix(".jsonl")
    write_text(txt, "".join(("(NOPARSE)" if t is None else t.to_bracketed()) + "\n" for t in trees))
    write_records(jsonl, "trees", (None if t is None else t.to_record() for t in trees), rules=rules.to_names())
    return txt, jsonl


def read_trees(path) -> list:
    head, rows = read_records(path, "trees")
    try:
        rules = RuleConfig.from_names(**head["rules"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}:1: bad rule header ({exc})") from None
    loose = rules.with_limits(max_depth=rules.max_depth + 1)
    trees = []
    for lineno, rec in rows:
        if rec is None:
            trees.append(None)
            continue
        try:
            trees.append(Derivation.from_record(rec, loose))
        except (TypeError, KeyError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad tree record ({exc})") from None
    return trees
