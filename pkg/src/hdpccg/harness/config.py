"""Pipeline configuration: nested dataclasses read strictly from JSON.

Unknown keys are errors at every level. Overrides use dotted paths
(``hdp.iterations=50``) with JSON values.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..categories import RuleConfig
from ..errors import ConfigError
from ..grounding import Alphabets
from ..hdp import HdpParams


@dataclass
class RulesSection:
    kinds: list = field(default_factory=lambda: ["FwdApp", "BwdApp"])
    raise_targets: list = field(default_factory=lambda: ["S"])
    raisable: list = field(default_factory=lambda: ["NP", "N"])
    max_depth: int = 2
    max_arity: int = 2
    atoms: list = field(default_factory=lambda: ["S", "N", "NP"])

    def build(self) -> RuleConfig:
        return RuleConfig.from_names(kinds=self.kinds, raise_targets=self.raise_targets,
                                     raisable=self.raisable, max_depth=self.max_depth,
                                     max_arity=self.max_arity, atoms=self.atoms)


@dataclass
class PosSection:
    K: int = 10
    alpha_t: float = 1.0
    alpha_e: float = 0.1
    sweeps: int = 200
    burn_in: int = 100
    thin: int = 5
    audit_every: int = 0


@dataclass
class GroundingSection:
    theta: float = 0.5
    phi_prior: dict | list | None = None
    sweeps: int = 500
    presence_ratio: bool = True
    audit_every: int = 0


@dataclass
class HdpSection:
    alpha_dp: float = 1.0
    gamma: float = 1.0
    kind_prior: float = 1.0
    emission_prior: float = 0.1
    p_slash: float = 0.4
    resample_hyper: bool = False
    pool_refresh: int = 10
    iterations: int = 500
    chains: int = 3
    min_count: int = 5
    audit_every: int = 0

    def params(self, n_tags: int) -> HdpParams:
        return HdpParams(self.alpha_dp, self.gamma, self.kind_prior, self.emission_prior, self.p_slash,
                         n_tags, self.resample_hyper, self.pool_refresh)


@dataclass
class SynthSection:
    n_sentences: int = 500
    grammar: dict | None = None  # SynthGrammarSpec.to_dict(); None selects the built-in grammar


@dataclass
class IoSection:
    lowercase: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    tags: str = "induced"  # "induced" (POS sampler output) or "gold" (synthetic gold tags) for induce
    rules: RulesSection = field(default_factory=RulesSection)
    pos: PosSection = field(default_factory=PosSection)
    grounding: GroundingSection = field(default_factory=GroundingSection)
    hdp: HdpSection = field(default_factory=HdpSection)
    synth: SynthSection = field(default_factory=SynthSection)
    io: IoSection = field(default_factory=IoSection)
    alphabets: dict = field(default_factory=lambda: {"action": 3, "color": 4, "spatial": 2, "geometry": 3})

    def validate(self) -> "PipelineConfig":
        if self.tags not in ("induced", "gold"):
            raise ConfigError("tags must be 'induced' or 'gold'")
        positive = {
            "pos.K": self.pos.K, "pos.alpha_t": self.pos.alpha_t, "pos.alpha_e": self.pos.alpha_e,
            "pos.sweeps": self.pos.sweeps, "pos.thin": self.pos.thin,
            "grounding.theta": self.grounding.theta, "grounding.sweeps": self.grounding.sweeps,
            "hdp.alpha_dp": self.hdp.alpha_dp, "hdp.gamma": self.hdp.gamma, "hdp.kind_prior": self.hdp.kind_prior,
            "hdp.emission_prior": self.hdp.emission_prior, "hdp.iterations": self.hdp.iterations,
            "hdp.chains": self.hdp.chains, "hdp.pool_refresh": self.hdp.pool_refresh,
            "synth.n_sentences": self.synth.n_sentences,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.pos.burn_in < self.pos.sweeps:
            raise ConfigError("pos.burn_in must lie in [0, pos.sweeps)")
        if not 0 <= self.hdp.p_slash < 1:
            raise ConfigError("hdp.p_slash must lie in [0, 1)")
        if self.hdp.min_count < 0:
            raise ConfigError("hdp.min_count must be nonnegative")
        self.alphabet_sizes()
        self.rules.build()
        return self

    def alphabet_sizes(self) -> Alphabets:
        if set(self.alphabets) != {"action", "color", "spatial", "geometry"}:
            raise ConfigError("alphabets must name exactly action, color, spatial, geometry")
        if not all(isinstance(v, int) and v > 0 for v in self.alphabets.values()):
            raise ConfigError("alphabet sizes must be positive integers")
        return Alphabets(**self.alphabets)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        path = f"{where}.{name}" if where else name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path)
        else:
            kwargs[name] = _coerce(default, value, path)
    return cls(**kwargs)


def _coerce(default, value, path):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    return value


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "").validate()


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b=value`` strings to a raw config dict (value parsed as JSON,
    falling back to a plain string)."""
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return data


def load_config(path, overrides=()) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(apply_overrides(data, overrides))
