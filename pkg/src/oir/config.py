"""YAML run configuration.

A run file has up to four sections mirroring the component configs plus a
few top-level keys::

    mode: oir                 # shorthand for train.mode
    output_dir: runs
    suites: null              # alternative instruction-suite TSV
    audit_log: false          # keep raw LLM request/response pairs
    train:    {...}           # TrainConfig fields
    env:      {...}           # EnvConfig fields
    embedder: {...}           # EmbedderSpec fields
    llm:      {...}           # LlmSpec fields

Unknown keys anywhere are errors.  Overrides are ``key=value`` strings
where ``key`` is dotted (``train.lr``) or a bare field name that exists in
exactly one section; values are parsed as YAML scalars.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import gridworld as gw
from .embedding import EmbedderSpec
from .learner.config import TrainConfig
from .relabeler import LlmSpec

SECTIONS = {"train": TrainConfig, "env": gw.EnvConfig, "embedder": EmbedderSpec, "llm": LlmSpec}
TOP_LEVEL = ("mode", "output_dir", "suites", "audit_log")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    env: gw.EnvConfig = field(default_factory=gw.EnvConfig)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    llm: LlmSpec = field(default_factory=LlmSpec)
    output_dir: str = "runs"
    suites: str | None = None
    audit_log: bool = False

    def to_dict(self) -> dict:
        return {"output_dir": self.output_dir, "suites": self.suites, "audit_log": self.audit_log,
                "train": self.train.to_dict(), "env": asdict(self.env), "embedder": asdict(self.embedder),
                "llm": asdict(self.llm)}

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _coerce(cls, body: dict) -> dict:
    """Numbers written like ``1e-4`` load from YAML as strings; convert them for numeric fields."""
    out = dict(body)
    for f in fields(cls):
        if f.name not in out or not isinstance(f.default, float):
            continue
        v = out[f.name]
        if isinstance(v, str):
            try:
                out[f.name] = float(v)
            except ValueError:
                raise ConfigError(f"{f.name} must be a number, got {v!r}") from None
        elif isinstance(v, int) and not isinstance(v, bool):
            out[f.name] = float(v)
    return out


def _apply_override(doc: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip().lstrip("-")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: cannot parse value {raw!r}: {exc}") from None
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"override {key}: unknown section {section!r}")
        if name not in _field_names(SECTIONS[section]):
            raise ConfigError(f"override {key}: unknown key {name!r} in section {section!r}")
        doc.setdefault(section, {})[name] = value
        return
    if key in TOP_LEVEL:
        doc[key] = value
        return
    owners = [s for s, cls in SECTIONS.items() if key in _field_names(cls)]
    if not owners:
        raise ConfigError(f"override {key}: unknown key")
    if len(owners) > 1:
        raise ConfigError(f"override {key} is ambiguous between sections {owners}; use a dotted key")
    doc.setdefault(owners[0], {})[key] = value


def build(doc: dict | None, overrides=()) -> RunConfig:
    """Validate a parsed document (plus overrides) into a :class:`RunConfig`."""
    doc = dict(doc or {})
    for key in doc:
        if key not in SECTIONS and key not in TOP_LEVEL:
            raise ConfigError(f"unknown top-level key {key!r}")
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for item in overrides:
        _apply_override(doc, item)
    parts = {}
    for section, cls in SECTIONS.items():
        body = doc.get(section)
        if body is None:
            body = {}
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        body = _coerce(cls, body)
        unknown = set(body) - _field_names(cls)
        if unknown:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
        if section == "train" and doc.get("mode") is not None:
            body = {**body, "mode": doc["mode"]}
        try:
            parts[section] = cls(**body)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {section} config: {exc}") from None
    output_dir = doc.get("output_dir", "runs")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir must be a non-empty string")
    suites = doc.get("suites")
    if suites is not None and not isinstance(suites, str):
        raise ConfigError("suites must be a path string")
    return RunConfig(parts["train"], parts["env"], parts["embedder"], parts["llm"], output_dir, suites,
                     bool(doc.get("audit_log", False)))


def load(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return build(doc, overrides)
