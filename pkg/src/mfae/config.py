"""Flat key=value experiment configuration.

One pair per line, "#" starts a comment, keys are validated against a
per-kind schema and fail fast: unknown keys, duplicate keys (with the
line number), type mismatches and missing required keys are all errors.
Paths are resolved relative to the config file and must exist at load.
"""

import os
from dataclasses import dataclass, field

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "KINDS"]

KINDS = ("relu_dynamics", "bounded_dynamics", "coupling", "two_stage", "real_data")
_TRAINING_KINDS = ("relu_dynamics", "bounded_dynamics", "two_stage", "real_data")


class ConfigError(ValueError):
    pass


def _parse_int(text):
    return int(text)


def _parse_float(text):
    return float(text)


def _parse_str(text):
    return text


def _parse_int_list(text):
    return tuple(int(p.strip()) for p in text.split(",") if p.strip())


def _parse_float_list(text):
    return tuple(float(p.strip()) for p in text.split(",") if p.strip())


def _parse_blocks(text):
    """"d1:v1, d2:v2, ..." -> ((d1, v1), (d2, v2), ...)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        count, _, value = part.partition(":")
        out.append((int(count.strip()), float(value.strip())))
    if not out:
        raise ValueError("empty block list")
    return tuple(out)


def _parse_q_blocks(text):
    """"s1:s2; s1:s2; ..." -> ((s1, s2), ...), one pair per foreign law."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        first, _, second = part.partition(":")
        out.append((float(first.strip()), float(second.strip())))
    if not out:
        raise ValueError("empty q_blocks list")
    return tuple(out)


def _parse_checkpoints(text):
    """Either explicit "0,10,100,..." steps or "log:<count>"."""
    text = text.strip()
    if text.startswith("log:"):
        return ("log", int(text[4:]))
    return _parse_int_list(text)


# key -> (parser, kinds that accept it)
_SCHEMA = {
    "kind": (_parse_str, KINDS),
    "seed": (_parse_int, KINDS),
    "spectrum": (_parse_str, ("relu_dynamics", "coupling", "two_stage")),
    "blocks": (_parse_blocks, ("relu_dynamics", "bounded_dynamics", "coupling", "two_stage")),
    "idx_images": (_parse_str, ("real_data",)),
    "idx_eval": (_parse_str, ("real_data",)),
    "n_neurons": (_parse_int, _TRAINING_KINDS),
    "lambda": (_parse_float, KINDS),
    "epsilon": (_parse_float, _TRAINING_KINDS + ("coupling",)),
    "r0": (_parse_float, KINDS),
    "steps": (_parse_int, _TRAINING_KINDS),
    "batch_size": (_parse_int, _TRAINING_KINDS + ("coupling",)),
    "checkpoints": (_parse_checkpoints, _TRAINING_KINDS),
    "activation": (_parse_str, _TRAINING_KINDS),
    "mc_samples": (_parse_int, _TRAINING_KINDS),
    "norm_blocks": (_parse_int_list, _TRAINING_KINDS),
    "m_list": (_parse_int_list, ("two_stage",)),
    "resamples": (_parse_int, ("two_stage",)),
    "n_list": (_parse_int_list, ("coupling",)),
    "eps_list": (_parse_float_list, ("coupling",)),
    "horizon": (_parse_float, ("coupling",)),
    "n_seeds": (_parse_int, ("coupling",)),
    "q_blocks": (_parse_q_blocks, ("bounded_dynamics",)),
}

# checked in order; the first absent one is reported
_REQUIRED = {
    "relu_dynamics": ("n_neurons", "epsilon", "r0", "steps"),
    "bounded_dynamics": ("blocks", "n_neurons", "epsilon", "r0", "steps"),
    "coupling": ("n_list", "epsilon", "r0", "horizon"),
    "two_stage": ("n_neurons", "epsilon", "r0", "steps", "m_list"),
    "real_data": ("idx_images", "n_neurons", "epsilon", "r0", "steps"),
}

_DEFAULTS = {
    "seed": 0,
    "lambda": 0.0,
    "activation": "relu",
    "mc_samples": 10_000,
    "resamples": 20,
    "n_seeds": 3,
    "checkpoints": ("log", 30),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description plus the raw pairs for the manifest."""

    kind: str
    values: dict = field(repr=False)
    base_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False)

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def resolve(self, path):
        return os.path.normpath(os.path.join(self.base_dir, path))


def load_config(path, overrides=None):
    """Parse and validate a config file; overrides are raw key=value strings."""
    pairs = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if key in pairs:
                raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
            pairs[key] = (value, line_no)
    for key, value in (overrides or {}).items():
        pairs[key] = (str(value), None)
    return _validate(path, pairs)


def _validate(path, pairs):
    def where(line_no):
        return f"{path}:{line_no}" if line_no else f"{path} (override)"

    for key, (_, line_no) in pairs.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{where(line_no)}: unknown key {key!r}")

    if "kind" not in pairs:
        raise ConfigError(f"{path}: missing required key 'kind'")
    kind = pairs["kind"][0]
    if kind not in KINDS:
        raise ConfigError(f"{path}: unknown experiment kind {kind!r} (choose from {', '.join(KINDS)})")

    values = {}
    for key, (text, line_no) in pairs.items():
        parser, allowed = _SCHEMA[key]
        if kind not in allowed:
            raise ConfigError(f"{where(line_no)}: key {key!r} is not valid for kind {kind!r}")
        try:
            values[key] = parser(text)
        except ValueError as err:
            raise ConfigError(f"{where(line_no)}: bad value for {key!r}: {err}") from None

    for key in _REQUIRED[kind]:
        if key not in values:
            raise ConfigError(f"{path}: missing required key {key!r} for kind {kind!r}")
    if kind in ("relu_dynamics", "coupling", "two_stage"):
        if ("spectrum" in values) == ("blocks" in values):
            raise ConfigError(f"{path}: provide exactly one of 'spectrum' or 'blocks'")
    if kind == "bounded_dynamics" and len(values["blocks"]) != 2:
        raise ConfigError(f"{path}: bounded_dynamics needs exactly two blocks")

    for key, default in _DEFAULTS.items():
        _, allowed = _SCHEMA[key]
        if kind in allowed:
            values.setdefault(key, default)
    if kind == "coupling":
        values.setdefault("batch_size", 1)
        values.setdefault("eps_list", (values["epsilon"],))
    else:
        values.setdefault("batch_size", 100)

    base_dir = os.path.dirname(os.path.abspath(path))
    for key in ("spectrum", "idx_images", "idx_eval"):
        if key in values:
            resolved = os.path.normpath(os.path.join(base_dir, values[key]))
            if not os.path.exists(resolved):
                raise ConfigError(f"{path}: {key} file does not exist: {resolved}")

    raw = {key: text for key, (text, _) in pairs.items()}
    return ExperimentConfig(kind=kind, values=values, base_dir=base_dir, raw=raw)
