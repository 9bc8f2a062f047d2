"""Command line driver: synth, tag, ground, induce, parse, resolve, eval.

Every command reads its inputs from ``--in`` (default: the ``--out``
directory) and writes its outputs plus ``manifest.<command>.json`` to
``--out``. Exit codes: 0 success, 1 usage, 2 bad data or config, 3 failed audit.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
from pathlib import Path

import numba
import numpy as np
import scipy

from .. import __version__
from ..errors import AuditError, ConfigError, DataError, HdpCcgError, NoParse
from ..grounding import GroundedLexiconEntry, ground_audit, ground_train, grounded_lexicon, \
    resolve_instruction
from ..hdp import extract_grammar, grammar_table, hdp_audit, hdp_parse, hdp_train, load_checkpoint, \
    save_checkpoint
from ..pos import PosModel, pos_audit, pos_decode, pos_train
from . import io
from .config import PipelineConfig, load_config
from .evaluate import EvalReport, eval_brackets, eval_grounding, eval_tags
from .synth import SynthGrammarSpec, default_grammar_spec, synth_corpus

log = logging.getLogger("hdpccg")

# fixed offsets keep the stages' random streams apart under one seed
STAGE_SEEDS = {"synth": 0, "tag": 1, "ground": 2, "induce": 3, "scenes": 4}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class Run:
    """One command invocation: config, directories and the files it touched."""

    def __init__(self, command: str, cfg: PipelineConfig, indir: Path, outdir: Path):
        self.command, self.cfg, self.indir, self.outdir = command, cfg, indir, outdir
        self.inputs: dict = {}
        self.outputs: list = []

    @property
    def seed(self) -> int:
        return self.cfg.seed + STAGE_SEEDS.get(self.command, 0)

    def input(self, name: str, override=None) -> Path:
        path = Path(override) if override else self.indir / name
        if not path.exists():
            raise DataError(f"missing input {path} (run the upstream command first)")
        self.inputs[path.name] = io.sha256_file(path)
        return path

    def optional(self, name: str):
        path = self.indir / name
        return self.input(name) if path.exists() else None

    def output(self, name: str) -> Path:
        path = self.outdir / name
        self.outputs.append(path)
        return path

    def manifest(self) -> Path:
        doc = {
            "format_version": io.FORMAT_VERSION,
            "kind": "manifest",
            "command": self.command,
            "config_sha256": self.cfg.sha256(),
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "stage_seed": self.seed,
            "versions": {"hdpccg": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {p.name: io.sha256_file(p) for p in sorted(self.outputs)},
        }
        path = self.outdir / f"manifest.{self.command}.json"
        io.write_json(path, doc)
        return path


# -- commands ------------------------------------------------------------------

def _spec(cfg: PipelineConfig) -> SynthGrammarSpec:
    if cfg.synth.grammar is None:
        return default_grammar_spec()
    try:
        return SynthGrammarSpec.from_dict(cfg.synth.grammar)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"synth.grammar: {exc}") from None


def cmd_synth(run: Run, args) -> None:
    """Sample a corpus, gold trees, gold tags and scenes from a generator grammar."""
    spec = _spec(run.cfg)
    sentences, trees, tags, scenes = synth_corpus(spec, run.cfg.synth.n_sentences, np.random.default_rng(run.seed))
    io.write_corpus(run.output("corpus.txt"), sentences)
    tagset = sorted({t for ts in tags for t in ts})
    ids = {t: i for i, t in enumerate(tagset)}
    io.write_tagged(run.output("gold_tags.jsonl"), sentences, [[ids[t] for t in ts] for ts in tags], tagset)
    txt, jsonl = io.write_trees(run.outdir / "gold_trees", trees, spec.rule_config)
    run.outputs += [txt, jsonl]
    if any(s is not None for s in scenes):
        io.write_scenes(run.output("scenes.jsonl"), scenes, spec.alphabets)
    io.write_json(run.output("synth_spec.json"),
                  {"format_version": io.FORMAT_VERSION, "kind": "synth_spec", "spec": spec.to_dict()})


def cmd_tag(run: Run, args) -> None:
    """Induce POS tags with the collapsed HMM sampler."""
    cfg = run.cfg
    sentences = io.load_corpus(run.input("corpus.txt", args.corpus), cfg.io.lowercase)
    p = cfg.pos
    state = pos_train(sentences, p.K, p.alpha_t, p.alpha_e, p.sweeps, p.burn_in, p.thin, run.seed, p.audit_every)
    pos_audit(state)
    decoded = pos_decode(state)
    tags = [[t for _, t in s] for s in decoded]
    io.write_tagged(run.output("tagged.jsonl"), sentences, tags, [f"T{k}" for k in range(p.K)])
    io.write_tagged_text(run.output("tagged.txt"), [[(w, f"T{t}") for w, t in s] for s in decoded])
    model = PosModel.from_state(state)
    io.write_json(run.output("pos_model.json"),
                  {"format_version": io.FORMAT_VERSION, "kind": "pos_model", **model.to_dict()})


def _phi_prior(raw):
    if isinstance(raw, dict):
        return {(int(k) if str(k).lstrip("-").isdigit() else k): v for k, v in raw.items()}
    return raw


def cmd_ground(run: Run, args) -> None:
    """Learn word groundings from tagged sentences paired with scenes."""
    cfg = run.cfg
    sentences, tags, _ = io.read_tagged(run.input("tagged.jsonl"))
    scenes, alphabets = io.read_scenes(run.input("scenes.jsonl", args.scenes), cfg.seed + STAGE_SEEDS["scenes"],
                                     cfg.alphabet_sizes())
    if len(scenes) != len(sentences):
        raise DataError(f"{len(scenes)} scenes for {len(sentences)} sentences")
    pairs = [(list(zip(s, t)), sc) for s, t, sc in zip(sentences, tags, scenes) if sc is not None]
    if not pairs:
        raise DataError("no sentence has a scene")
    g = cfg.grounding
    try:
        state = ground_train(pairs, alphabets, _phi_prior(g.phi_prior), g.theta, g.sweeps, run.seed,
                             g.audit_every, g.presence_ratio)
    except ValueError as exc:
        raise ConfigError(f"grounding: {exc}") from None
    ground_audit(state)
    io.write_records(run.output("lexicon.jsonl"), "lexicon", (e.to_record() for e in grounded_lexicon(state)),
                     alphabets=alphabets.to_dict())


def _tag_source(run: Run):
    name = "gold_tags.jsonl" if run.cfg.tags == "gold" else "tagged.jsonl"
    return io.read_tagged(run.input(name))


def cmd_induce(run: Run, args) -> None:
    """Induce an HDP-CCG grammar from tag sequences."""
    cfg = run.cfg
    _, tags, tagset = _tag_source(run)
    rules = cfg.rules.build()
    h = cfg.hdp
    state, chains = hdp_train(tags, rules, h.params(len(tagset)), h.iterations, h.chains, run.seed, h.audit_every)
    hdp_audit(state)
    save_checkpoint(state, run.output("checkpoint.json"))
    grammar, emissions = extract_grammar(state, h.min_count)
    io.write_records(run.output("grammar.jsonl"), "grammar",
                     [{"parent": r.parent, "kind": r.kind, "argument": r.argument, "count": r.count,
                       "prob": r.prob, "kind_prob": r.kind_prob} for r in grammar],
                     tagset=list(tagset), emissions=emissions,
                     chains=[{"seed": c.seed, "score": c.score} for c in chains])
    io.write_text(run.output("grammar.tsv"), grammar_table(grammar))


def cmd_parse(run: Run, args) -> None:
    """Viterbi-parse the tag sequences with the induced grammar."""
    _, tags, _ = _tag_source(run)
    try:
        state, _ = load_checkpoint(run.input("checkpoint.json"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad checkpoint: {exc}") from None
    trees = []
    for ts in tags:
        try:
            trees.append(hdp_parse(state, ts))
        except NoParse:
            trees.append(None)
    txt, jsonl = io.write_trees(run.outdir / "trees", trees, state.rules)
    run.outputs += [txt, jsonl]


def cmd_resolve(run: Run, args) -> None:
    """Resolve instructions against their scenes with the grounded lexicon."""
    cfg = run.cfg
    _, rows = io.read_records(run.input("lexicon.jsonl"), "lexicon")
    try:
        lexicon = [GroundedLexiconEntry.from_record(r) for _, r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad lexicon record: {exc}") from None
    sentences = io.load_corpus(run.input("corpus.txt", args.corpus), cfg.io.lowercase)
    scenes, _ = io.read_scenes(run.input("scenes.jsonl", args.scenes), cfg.seed + STAGE_SEEDS["scenes"],
                                     cfg.alphabet_sizes())
    if len(scenes) != len(sentences):
        raise DataError(f"{len(scenes)} scenes for {len(sentences)} sentences")
    out = []
    for i, (s, sc) in enumerate(zip(sentences, scenes)):
        if sc is None:
            continue
        out.append({"sentence": i, **resolve_instruction(s, sc, lexicon=lexicon)})
    io.write_records(run.output("resolutions.jsonl"), "resolutions", out)


def cmd_eval(run: Run, args) -> None:
    """Score trees, tags and groundings against the synthetic gold files."""
    report = EvalReport()
    trees_path, gold_trees_path = run.optional("trees.jsonl"), run.optional("gold_trees.jsonl")
    if trees_path and gold_trees_path:
        b = eval_brackets(io.read_trees(trees_path), io.read_trees(gold_trees_path))
        report.bracket_precision, report.bracket_recall, report.bracket_f1 = b["precision"], b["recall"], b["f1"]
        report.counts["brackets"] = {k: b[k] for k in ("matched", "predicted", "gold")}
    else:
        report.notes.append("brackets skipped: trees.jsonl or gold_trees.jsonl missing")
    tagged_path, gold_tags_path = run.optional("tagged.jsonl"), run.optional("gold_tags.jsonl")
    if tagged_path and gold_tags_path:
        _, pred, _ = io.read_tagged(tagged_path)
        _, gold, gold_set = io.read_tagged(gold_tags_path)
        t = eval_tags(pred, [[gold_set[x] for x in s] for s in gold])
        report.tag_many_to_one, report.tag_v_measure = t["many_to_one"], t["v_measure"]
        report.counts["tags"] = {"tokens": t["tokens"]}
    else:
        report.notes.append("tags skipped: tagged.jsonl or gold_tags.jsonl missing")
    lexicon_path, spec_path = run.optional("lexicon.jsonl"), run.optional("synth_spec.json")
    if lexicon_path and spec_path:
        _, rows = io.read_records(lexicon_path, "lexicon")
        predicted = {r["word"]: r["modality"] for _, r in rows}
        spec = SynthGrammarSpec.from_dict(io.read_json(spec_path, "synth_spec")["spec"])
        gold = {w: "none" for ws in spec.words.values() for w in ws}
        gold.update({w: m for w, (m, _) in spec.groundings.items()})
        gold = {w: m for w, m in gold.items() if w in predicted}
        g = eval_grounding(predicted, gold)
        report.grounding_modality_accuracy = g["accuracy"]
        report.counts["grounding"] = {"words": g["words"], "correct": g.get("correct", 0)}
    else:
        report.notes.append("grounding skipped: lexicon.jsonl or synth_spec.json missing")
    report.check()
    io.write_json(run.output("eval.json"), {"format_version": io.FORMAT_VERSION, "kind": "eval_report",
                                            **report.to_dict()})


COMMANDS = {"synth": cmd_synth, "tag": cmd_tag, "ground": cmd_ground, "induce": cmd_induce,
            "parse": cmd_parse, "resolve": cmd_resolve, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdpccg", description="Words to grammar: tagging, grounding and CCG induction.")
    parser.add_argument("--version", action="version", version=f"hdpccg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip())
        p.add_argument("--config", required=True, help="JSON pipeline config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--in", dest="indir", help="input directory (default: --out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                       help="override a config value, e.g. hdp.iterations=50")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("tag", "resolve"):
            p.add_argument("--corpus", help="plain-text corpus (default: IN/corpus.txt)")
        if name in ("ground", "resolve"):
            p.add_argument("--scenes", help="scene records (default: IN/scenes.jsonl)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not Path(args.config).is_file():
        parser.print_usage(sys.stderr)
        print(f"hdpccg: error: config file {args.config} not found", file=sys.stderr)
        return 1
    try:
        cfg = load_config(args.config, args.set)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, Path(args.indir) if args.indir else outdir, outdir)
        COMMANDS[args.command](run, args)
        run.manifest()
    except AuditError as exc:
        print(f"hdpccg: audit failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"hdpccg: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hdpccg: error: {exc}", file=sys.stderr)
        return 2
    except HdpCcgError as exc:
        print(f"hdpccg: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
