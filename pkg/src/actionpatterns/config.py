"""Run configuration loaded from a YAML file.

Example::

    n_max: 5
    truncation: symmetric        # or prediction-only
    fixture_dir: fixtures        # default replay/record directory
    distractor_pool: null        # null = shipped pool
    base_iri: http://example.org/action-patterns#
    strict_ground_truth: false
    seed: 0
    backends:
      gpt-4:
        kind: chat_http
        endpoint: https://api.openai.com/v1/chat/completions
        model: gpt-4
        api_key_env: OPENAI_API_KEY
        requests_per_minute: 60
      replay:
        kind: replay
        model: gpt-4

API keys are never stored in the file; ``api_key_env`` names the environment
variable to read. Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .backends import BackendConfig, BackendKind, ConfigError
from .evaluation import Truncation
from .ontology import DEFAULT_BASE_IRI, OntologyError, OntologyVocabulary

DEFAULT_CONFIG_NAME = "actionpatterns.yaml"
CONFIG_ENV = "ACTIONPATTERNS_CONFIG"

_BACKEND_KEYS = {
    "kind",
    "endpoint",
    "model",
    "temperature",
    "api_key_env",
    "timeout",
    "max_retries",
    "requests_per_minute",
    "max_concurrency",
    "fixture_dir",
    "mask_token",
    "replays",
}
_SECRET_KEYS = {"api_key", "key", "token", "authorization"}


@dataclass(frozen=True)
class RunConfig:
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    n_max: int = 5
    truncation: Truncation = Truncation.SYMMETRIC
    fixture_dir: Path | None = None
    distractor_pool: Path | None = None
    base_iri: str = DEFAULT_BASE_IRI
    strict_ground_truth: bool = False
    seed: int = 0
    n_distractors: int = 5

    def backend(self, name: str) -> BackendConfig:
        try:
            return self.backends[name]
        except KeyError:
            available = ", ".join(sorted(self.backends)) or "<none>"
            raise ConfigError(f"unknown backend {name!r}; available backends: {available}") from None

    def override(self, **changes) -> RunConfig:
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _path(value, root: Path) -> Path | None:
    if value is None:
        return None
    path = Path(os.path.expanduser(str(value)))
    return path if path.is_absolute() else root / path


def _backend(name: str, raw: dict, root: Path, default_fixtures: Path | None) -> BackendConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"backend {name!r} must be a mapping")
    secrets = _SECRET_KEYS & set(raw)
    if secrets:
        raise ConfigError(f"backend {name!r}: secrets must come from the environment (api_key_env), not {sorted(secrets)}")
    unknown = set(raw) - _BACKEND_KEYS
    if unknown:
        raise ConfigError(f"backend {name!r}: unknown keys {sorted(unknown)}")
    values = dict(raw)
    try:
        values["kind"] = BackendKind(values.get("kind", ""))
        if "replays" in values:
            values["replays"] = BackendKind(values["replays"])
    except ValueError as exc:
        raise ConfigError(f"backend {name!r}: {exc}") from None
    values.setdefault("model", name)
    fixture_dir = _path(values.get("fixture_dir"), root) or default_fixtures
    if fixture_dir is not None:
        values["fixture_dir"] = fixture_dir
    if values["kind"] is BackendKind.REPLAY and fixture_dir is not None and not fixture_dir.is_dir():
        raise ConfigError(f"backend {name!r}: fixture directory {fixture_dir} does not exist")
    try:
        return BackendConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"backend {name!r}: {exc}") from None


def parse_config(data: dict, root: Path) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    fixture_dir = _path(data.get("fixture_dir"), root)
    raw_backends = data.get("backends") or {}
    if not isinstance(raw_backends, dict) or not raw_backends:
        raise ConfigError("config must define at least one backend under 'backends'")
    backends = {str(name): _backend(str(name), raw, root, fixture_dir) for name, raw in raw_backends.items()}
    distractors = _path(data.get("distractor_pool"), root)
    if distractors is not None and not distractors.is_file():
        raise ConfigError(f"distractor pool {distractors} does not exist")
    try:
        truncation = Truncation(data.get("truncation", Truncation.SYMMETRIC.value))
        base_iri = data.get("base_iri", DEFAULT_BASE_IRI)
        OntologyVocabulary(base_iri)
    except (ValueError, OntologyError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        backends=backends,
        n_max=int(data.get("n_max", 5)),
        truncation=truncation,
        fixture_dir=fixture_dir,
        distractor_pool=distractors,
        base_iri=base_iri,
        strict_ground_truth=bool(data.get("strict_ground_truth", False)),
        seed=int(data.get("seed", 0)),
        n_distractors=int(data.get("n_distractors", 5)),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(data or {}, path.resolve().parent)


def default_config_path() -> Path:
    return Path(os.environ.get(CONFIG_ENV, DEFAULT_CONFIG_NAME))
