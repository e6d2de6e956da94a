"""Experiment specs and the ``key = value`` config format.

A config has three sections::

    [experiment]
    tag = table1
    seeds = 0, 1, 2, 3, 4
    methods = erm, cvar, jtt, oracle_dro, qdiv

    [generator]
    bias_rate = 0.95

    [train]
    epochs = 60
    alpha = 9

Every key is optional except ``experiment.tag``; anything omitted takes
the dataclass default. ``alpha``, ``mix_fraction`` and ``mix_seed`` in
``[train]`` fill the nested mixing spec.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..datasets import GeneratorSpec
from ..dro import METHODS, TrainConfig
from ..mixing import MixSpec

EXPERIMENTS = ("table1", "alpha_sweep", "mix_ablation", "noise_sweep", "shift_eval")
SHIFTS = ("attr_flip", "attr_balance", "core_only")
NOMIX = "qdiv_nomix"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunPlan:
    """One (config, seed) cell of an experiment."""

    name: str
    cfg: TrainConfig
    seed: int
    noise: float = 0.0
    tag: str = "iid"


@dataclass(frozen=True)
class ExperimentSpec:
    tag: str
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    methods: tuple[str, ...] = ("erm", "cvar", "jtt", "oracle_dro", "qdiv")
    alphas: tuple[float, ...] = (1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0)
    noise_rates: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    shifts: tuple[str, ...] = SHIFTS
    test_per_class: int = 2000
    out: str = "results"

    def __post_init__(self):
        if self.tag not in EXPERIMENTS:
            raise ConfigError(f"experiment.tag: expected one of {EXPERIMENTS}, got {self.tag!r}")
        if not self.seeds:
            raise ConfigError("experiment.seeds: need at least one seed")
        for m in self.methods:
            if m not in METHODS and m != NOMIX:
                raise ConfigError(f"experiment.methods: unknown method {m!r}")
        for s in self.shifts:
            if s not in SHIFTS:
                raise ConfigError(f"experiment.shifts: unknown shift {s!r}")
        for r in self.noise_rates:
            if not 0.0 <= r <= 0.5:
                raise ConfigError(f"experiment.noise_rates: {r} outside [0, 0.5]")
        if self.test_per_class < 1:
            raise ConfigError("experiment.test_per_class: must be >= 1")

    def _method_cfg(self, method: str) -> TrainConfig:
        if method == NOMIX:
            return replace(self.train, method="qdiv", mix=replace(self.train.mix, mix_fraction=0.0))
        return replace(self.train, method=method)

    @property
    def configs(self) -> list[tuple[str, TrainConfig]]:
        """Named training configs, in report order."""
        if self.tag == "alpha_sweep":
            return [(f"qdiv_a{a:g}", replace(self.train, method="qdiv", mix=replace(self.train.mix, alpha=a)))
                    for a in self.alphas]
        if self.tag == "mix_ablation":
            return [("qdiv", self._method_cfg("qdiv")), (NOMIX, self._method_cfg(NOMIX))]
        return [(m, self._method_cfg(m)) for m in self.methods]

    def plans(self) -> list[RunPlan]:
        rates = self.noise_rates if self.tag == "noise_sweep" else (0.0,)
        out = []
        for rate in rates:
            for name, cfg in self.configs:
                for s in self.seeds:
                    tag = f"noise={rate:g}" if self.tag == "noise_sweep" else "iid"
                    out.append(RunPlan(name, replace(cfg, seed=s), s, rate, tag))
        return out


# ---------------------------------------------------------------------------
# parsing

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"mix", "method", "seed"}
_MIX_KEYS = {"alpha": "alpha", "mix_fraction": "mix_fraction", "mix_seed": "seed"}
_GEN_KEYS = {f.name for f in fields(GeneratorSpec)}
_EXP_KEYS = {"tag", "seeds", "methods", "alphas", "noise_rates", "shifts", "test_per_class", "out"}
SECTIONS = {"experiment": _EXP_KEYS, "generator": _GEN_KEYS, "train": _TRAIN_KEYS | set(_MIX_KEYS)}


def _locate(lines: list[str]):
    """Map (section, key) to its 1-based line number."""
    where, section = {}, None
    for no, raw in enumerate(lines, 1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
        elif "=" in s:
            where.setdefault((section, s.split("=", 1)[0].strip().lower()), no)
    return where


def _coerce(text: str, kind, where: str):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip()
    except ValueError:
        name = getattr(kind, "__name__", str(kind))
        raise ConfigError(f"{where}: expected {name}, got {text!r}") from None


def _list(text: str, kind, where: str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    return tuple(_coerce(t, kind, where) for t in items)


def _field_type(cls, name):
    hint = {f.name: f.type for f in fields(cls)}[name]
    return {"int": int, "float": float, "bool": bool, "str": str}.get(hint, str)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentSpec:
    lines = text.splitlines()
    where = _locate(lines)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}:{where.get((section, None), '?')}: unknown section [{section}]")
        for key in cp[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(f"{source}:{where.get((section, key), '?')}: unknown key {section}.{key}")

    def loc(section, key):
        return f"{source}:{where.get((section, key), '?')}: {section}.{key}"

    if not cp.has_option("experiment", "tag"):
        raise ConfigError(f"{source}: missing required key experiment.tag")

    gen = {}
    if cp.has_section("generator"):
        for key, val in cp["generator"].items():
            gen[key] = _coerce(val, _field_type(GeneratorSpec, key), loc("generator", key))
    tr, mix = {}, {}
    if cp.has_section("train"):
        for key, val in cp["train"].items():
            if key in _MIX_KEYS:
                kind = int if key == "mix_seed" else float
                mix[_MIX_KEYS[key]] = _coerce(val, kind, loc("train", key))
            else:
                tr[key] = _coerce(val, _field_type(TrainConfig, key), loc("train", key))
    exp = {}
    e = cp["experiment"]
    list_kinds = {"seeds": int, "methods": str, "alphas": float, "noise_rates": float, "shifts": str}
    for key, val in e.items():
        if key in list_kinds:
            exp[key] = _list(val, list_kinds[key], loc("experiment", key))
        elif key == "test_per_class":
            exp[key] = _coerce(val, int, loc("experiment", key))
        else:
            exp[key] = val.strip()

    # range errors from the dataclasses name the offending field; prefix the location
    try:
        gspec = GeneratorSpec(**gen)
    except ValueError as exc:
        raise ConfigError(f"{source}: [generator] {exc}") from None
    try:
        mspec = MixSpec(**mix)
    except ValueError as exc:
        key = next((k for k, v in _MIX_KEYS.items() if v in str(exc)), "alpha")
        raise ConfigError(f"{loc('train', key)}: {exc}") from None
    try:
        tcfg = TrainConfig(mix=mspec, **tr)
    except ValueError as exc:
        raise ConfigError(f"{source}: [train] {exc}") from None
    return ExperimentSpec(generator=gspec, train=tcfg, **exp)


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def emit_config(spec: ExperimentSpec) -> str:
    """Serialize ``spec`` so that ``parse_config_text`` recovers it exactly."""
    out = ["[experiment]"]
    for f in fields(ExperimentSpec):
        if f.name in ("generator", "train"):
            continue
        out.append(f"{f.name} = {_fmt(getattr(spec, f.name))}")
    out += ["", "[generator]"]
    out += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(spec.generator).items()]
    out += ["", "[train]"]
    for f in fields(TrainConfig):
        if f.name in ("mix", "method", "seed"):
            continue
        out.append(f"{f.name} = {_fmt(getattr(spec.train, f.name))}")
    for key, attr in _MIX_KEYS.items():
        out.append(f"{key} = {_fmt(getattr(spec.train.mix, attr))}")
    return "\n".join(out) + "\n"
