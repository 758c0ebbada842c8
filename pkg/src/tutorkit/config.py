"""Run configuration: a flat key=value file overlaid by CLI overrides.

The schema is deliberately flat. Endpoint settings use dotted keys
(``tutor.base_url``, ``judge.temperature``, ...); everything else is a bare
key. Unknown keys are rejected rather than ignored, and secrets only ever
enter via the environment variable named in ``<endpoint>.api_key_env``.

Defaults reproduce the training hyperparameters: K=8 student attempts,
groups of 8 rollouts, batches of 16 problems, 16 max dialogue turns,
lambda_ped=0.75, lambda_think=0.3, theta=0.6, and 5 retries per request.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import TutorKitError
from .gateway import EndpointConfig
from .model import ABLATION_CONDITIONS, Condition, PromptStyle
from .reward import RewardWeights


class UnknownKey(TutorKitError):
    """The config contains a key outside the documented schema."""


class RangeError(TutorKitError):
    """A config value is outside its allowed range or not parseable."""


class MissingEndpoint(TutorKitError):
    """A pipeline needs an endpoint the config does not define."""


ENDPOINT_NAMES = ("tutor", "student", "judge", "labeler")

# key -> (type tag, default). Endpoint fields are validated separately.
_SCALAR_KEYS: dict[str, tuple[str, object]] = {
    "seed": ("int", 0),
    "k_attempts": ("int", 8),
    "group_size": ("int", 8),
    "batch_problems": ("int", 16),
    "max_turns": ("int", 16),
    "parallelism": ("int", 4),
    "lambda_ped": ("float", 0.75),
    "lambda_think": ("float", 0.3),
    "theta": ("float", 0.6),
    "filter_lo": ("float", 0.01),
    "filter_hi": ("float", 0.60),
    "n_train": ("int", None),
    "n_eval": ("int", None),
    "label_retries": ("int", 1),
    "dataset": ("str", None),
    "run_dir": ("str", None),
    "condition": ("str", "ped_think_reward"),
}

_CONDITION_KEYS = {
    "condition.name": ("str", None),
    "condition.thinking": ("bool", None),
    "condition.prompt_style": ("str", None),
    "condition.thinking_reward": ("bool", None),
}

_ENDPOINT_FIELDS: dict[str, tuple[str, object]] = {
    "base_url": ("str", None),
    "model": ("str", None),
    "api_key_env": ("str", ""),
    "temperature": ("float", None),  # per-endpoint default applied later
    "max_tokens": ("int", 2048),
    "timeout": ("float", 120.0),
    "max_retries": ("int", 5),
    "backoff_base": ("float", 0.5),
    "jitter": ("bool", False),
    "max_inflight": ("int", 16),
}

# Judges and labelers default to greedy decoding to keep rewards stable.
_DEFAULT_TEMPERATURE = {"tutor": 0.7, "student": 0.7, "judge": 0.0, "labeler": 0.0}


@dataclass
class RunConfig:
    condition: Condition
    weights: RewardWeights
    seed: int = 0
    k_attempts: int = 8
    group_size: int = 8
    batch_problems: int = 16
    max_turns: int = 16
    parallelism: int = 4
    filter_lo: float = 0.01
    filter_hi: float = 0.60
    n_train: int | None = None
    n_eval: int | None = None
    label_retries: int = 1
    dataset: str | None = None
    run_dir: str | None = None
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)

    def require_endpoint(self, name: str) -> EndpointConfig:
        ep = self.endpoints.get(name)
        if ep is None:
            raise MissingEndpoint(
                f"this command needs a {name!r} endpoint; set {name}.base_url and "
                f"{name}.model in the config, or pass --mock"
            )
        return ep

    def with_mock_endpoints(self, base_url: str) -> "RunConfig":
        """Point every unconfigured endpoint at an in-process or HTTP mock."""
        endpoints = dict(self.endpoints)
        for name in ENDPOINT_NAMES:
            if name not in endpoints:
                endpoints[name] = EndpointConfig(
                    base_url=base_url,
                    model_name="mock",
                    temperature=_DEFAULT_TEMPERATURE[name],
                    backoff_base=0.001,
                )
        return replace(self, endpoints=endpoints)

    def snapshot(self) -> dict:
        """Resolved config as a JSON-safe dict (no secrets, keys sorted)."""
        snap: dict = {
            "condition": {
                "name": self.condition.name,
                "thinking": self.condition.thinking_enabled,
                "prompt_style": self.condition.prompt_style.value,
                "thinking_reward": self.condition.thinking_reward_enabled,
            },
            "weights": {
                "lambda_ped": self.weights.lambda_ped,
                "lambda_think": self.weights.lambda_think,
                "theta": self.weights.theta,
            },
            "seed": self.seed,
            "k_attempts": self.k_attempts,
            "group_size": self.group_size,
            "batch_problems": self.batch_problems,
            "max_turns": self.max_turns,
            "parallelism": self.parallelism,
            "filter_lo": self.filter_lo,
            "filter_hi": self.filter_hi,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "label_retries": self.label_retries,
            "dataset": self.dataset,
            "endpoints": {
                name: {
                    "base_url": ep.base_url,
                    "model": ep.model_name,
                    "temperature": ep.temperature,
                    "max_tokens": ep.max_tokens,
                    "max_retries": ep.max_retries,
                }
                for name, ep in sorted(self.endpoints.items())
            },
        }
        return snap


def _parse_value(key: str, raw: str, kind: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise RangeError(f"config key {key!r}: {exc}") from exc


def _parse_pairs(lines, source: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise RangeError(f"{source}:{line_no}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Parse the config file, apply ``key=value`` overrides, and validate."""
    pairs: dict[str, str] = {}
    if path:
        with open(path, encoding="utf-8") as f:
            pairs.update(_parse_pairs(f, path))
    for item in overrides or []:
        if "=" not in item:
            raise RangeError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    return _build(pairs)


def _build(pairs: dict[str, str]) -> RunConfig:
    scalars: dict[str, object] = {k: default for k, (_, default) in _SCALAR_KEYS.items()}
    condition_over: dict[str, object] = {}
    endpoint_raw: dict[str, dict[str, object]] = {}

    for key, raw in pairs.items():
        if key in _SCALAR_KEYS:
            scalars[key] = _parse_value(key, raw, _SCALAR_KEYS[key][0])
        elif key in _CONDITION_KEYS:
            condition_over[key.split(".", 1)[1]] = _parse_value(key, raw, _CONDITION_KEYS[key][0])
        elif "." in key:
            prefix, _, fld = key.partition(".")
            if prefix not in ENDPOINT_NAMES or fld not in _ENDPOINT_FIELDS:
                raise UnknownKey(f"unknown config key {key!r}")
            endpoint_raw.setdefault(prefix, {})[fld] = _parse_value(
                key, raw, _ENDPOINT_FIELDS[fld][0]
            )
        else:
            raise UnknownKey(f"unknown config key {key!r}")

    condition = _resolve_condition(str(scalars["condition"]), condition_over)
    weights = _checked_weights(scalars)
    endpoints = {name: _build_endpoint(name, fields) for name, fields in endpoint_raw.items()}

    cfg = RunConfig(
        condition=condition,
        weights=weights,
        seed=int(scalars["seed"]),
        k_attempts=_positive("k_attempts", scalars),
        group_size=_positive("group_size", scalars),
        batch_problems=_positive("batch_problems", scalars),
        max_turns=_positive("max_turns", scalars),
        parallelism=_positive("parallelism", scalars),
        filter_lo=float(scalars["filter_lo"]),
        filter_hi=float(scalars["filter_hi"]),
        n_train=scalars["n_train"],
        n_eval=scalars["n_eval"],
        label_retries=int(scalars["label_retries"]),
        dataset=scalars["dataset"],
        run_dir=scalars["run_dir"],
        endpoints=endpoints,
    )
    if not 0.0 <= cfg.filter_lo <= cfg.filter_hi <= 1.0:
        raise RangeError(
            f"need 0 <= filter_lo <= filter_hi <= 1, got {cfg.filter_lo}, {cfg.filter_hi}"
        )
    for name in ("n_train", "n_eval"):
        value = getattr(cfg, name)
        if value is not None and value < 0:
            raise RangeError(f"{name} must be >= 0, got {value}")
    if cfg.label_retries < 0:
        raise RangeError(f"label_retries must be >= 0, got {cfg.label_retries}")
    return cfg


def _positive(key: str, scalars: dict) -> int:
    value = int(scalars[key])
    if value < 1:
        raise RangeError(f"{key} must be >= 1, got {value}")
    return value


def _checked_weights(scalars: dict) -> RewardWeights:
    try:
        return RewardWeights(
            lambda_ped=float(scalars["lambda_ped"]),
            lambda_think=float(scalars["lambda_think"]),
            theta=float(scalars["theta"]),
        )
    except ValueError as exc:
        raise RangeError(str(exc)) from exc


def _resolve_condition(name: str, over: dict[str, object]) -> Condition:
    if over:
        style_raw = str(over.get("prompt_style", "normal")).lower()
        try:
            style = PromptStyle(style_raw)
        except ValueError:
            raise RangeError(
                f"condition.prompt_style must be 'normal' or 'pedagogical', got {style_raw!r}"
            ) from None
        try:
            return Condition(
                name=str(over.get("name", "custom")),
                thinking_enabled=bool(over.get("thinking", True)),
                prompt_style=style,
                thinking_reward_enabled=bool(over.get("thinking_reward", False)),
            )
        except ValueError as exc:
            raise RangeError(str(exc)) from exc
    if name not in ABLATION_CONDITIONS:
        raise RangeError(
            f"unknown condition {name!r}; expected one of {sorted(ABLATION_CONDITIONS)} "
            "or explicit condition.* keys"
        )
    return ABLATION_CONDITIONS[name]


def _build_endpoint(name: str, fields: dict[str, object]) -> EndpointConfig:
    if "base_url" not in fields or "model" not in fields:
        raise RangeError(f"endpoint {name!r} needs both {name}.base_url and {name}.model")
    temperature = fields.get("temperature")
    if temperature is None:
        temperature = _DEFAULT_TEMPERATURE[name]
    try:
        return EndpointConfig(
            base_url=str(fields["base_url"]),
            model_name=str(fields["model"]),
            api_key_env=str(fields.get("api_key_env", "")),
            temperature=float(temperature),
            max_tokens=int(fields.get("max_tokens", 2048)),
            request_timeout=float(fields.get("timeout", 120.0)),
            max_retries=int(fields.get("max_retries", 5)),
            backoff_base=float(fields.get("backoff_base", 0.5)),
            jitter=bool(fields.get("jitter", False)),
            max_inflight=int(fields.get("max_inflight", 16)),
        )
    except ValueError as exc:
        raise RangeError(f"endpoint {name!r}: {exc}") from exc


def write_snapshot(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.snapshot(), f, indent=2, sort_keys=True)
        f.write("\n")
