"""Load and validate run configuration for recovery experiments."""

from __future__ import annotations

import copy
import json
import math
from typing import Any

from alecton.models import AlectonConfig
from alecton.utils import merge_dicts

SAMPLER_CHOICES = {"exact", "entrywise", "rect", "trace", "trace-sym", "subspace", "subspace-split"}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "eta": None,
    "k_steps": None,
    "l_steps": 1000,
    "p": 1,
    "q": None,
    "epsilon": 0.1,
    "eigengap": None,
    "renorm_every": 1000,
    "trace_every": None,
    "sampler": "entrywise",
    "m_keep": None,
    "noise": {
        "additive": 0.0,
        "multiplicative": 0.0,
    },
    "trials": 1,
    "threads": 1,
    "force": False,
    "angular_only": False,
}

# CLI flag destination -> config path.
CLI_KEYS: dict[str, tuple[str, ...]] = {
    "seed": ("seed",),
    "eta": ("eta",),
    "k_steps": ("k_steps",),
    "l_steps": ("l_steps",),
    "p": ("p",),
    "q": ("q",),
    "epsilon": ("epsilon",),
    "eigengap": ("eigengap",),
    "renorm_every": ("renorm_every",),
    "trace_every": ("trace_every",),
    "sampler": ("sampler",),
    "m_keep": ("m_keep",),
    "noise_add": ("noise", "additive"),
    "noise_mul": ("noise", "multiplicative"),
    "trials": ("trials",),
    "threads": ("threads",),
    "force": ("force",),
    "angular_only": ("angular_only",),
}


class ConfigError(ValueError):
    pass


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool)) and math.isfinite(value)


def _require_non_negative_int(errors: list[str], path: str, value: Any) -> None:
    if value is None:
        return
    if not _is_int(value):
        errors.append(f"{path} must be an integer")
        return
    if value < 0:
        errors.append(f"{path} must be >= 0")


def _require_positive_int(errors: list[str], path: str, value: Any) -> None:
    if value is None:
        return
    if not _is_int(value):
        errors.append(f"{path} must be an integer")
        return
    if value <= 0:
        errors.append(f"{path} must be > 0")


def _require_positive_number(errors: list[str], path: str, value: Any) -> None:
    if value is None:
        return
    if not _is_number(value):
        errors.append(f"{path} must be a finite number")
        return
    if value <= 0:
        errors.append(f"{path} must be > 0")


def _require_non_negative_number(errors: list[str], path: str, value: Any) -> None:
    if value is None:
        return
    if not _is_number(value):
        errors.append(f"{path} must be a finite number")
        return
    if value < 0:
        errors.append(f"{path} must be >= 0")


def _require_enum(errors: list[str], path: str, value: Any, allowed: set[str]) -> None:
    if value is None:
        return
    if str(value).strip().lower() not in allowed:
        errors.append(f"{path} must be one of: {', '.join(sorted(allowed))}")


def default_config() -> dict[str, Any]:
    return copy.deepcopy(DEFAULTS)


def load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return default_config()
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return merge_dicts(copy.deepcopy(DEFAULTS), raw)


def apply_cli_overrides(config: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Copy explicitly given flags (not None, not False) into the config."""
    for dest, path in CLI_KEYS.items():
        value = overrides.get(dest)
        if value is None or value is False:
            continue
        node = config
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return config


def validate_config(config: dict[str, Any]) -> None:
    errors: list[str] = []

    if not _is_int(config.get("seed")):
        errors.append("seed must be an integer")
    _require_positive_number(errors, "eta", config.get("eta"))
    _require_positive_int(errors, "k_steps", config.get("k_steps"))
    _require_positive_int(errors, "l_steps", config.get("l_steps"))
    _require_positive_int(errors, "p", config.get("p"))
    _require_positive_int(errors, "q", config.get("q"))
    p, q = config.get("p"), config.get("q")
    if _is_int(p) and _is_int(q) and q < p:
        errors.append("q must be >= p")

    epsilon = config.get("epsilon")
    if not _is_number(epsilon) or not 0.0 < epsilon < 1.0:
        errors.append("epsilon must be a number in (0, 1)")

    _require_positive_number(errors, "eigengap", config.get("eigengap"))
    _require_non_negative_int(errors, "renorm_every", config.get("renorm_every"))
    _require_non_negative_int(errors, "trace_every", config.get("trace_every"))
    _require_enum(errors, "sampler", config.get("sampler"), SAMPLER_CHOICES)
    _require_positive_int(errors, "m_keep", config.get("m_keep"))
    sampler = str(config.get("sampler") or "").lower()
    if sampler in {"subspace", "subspace-split"} and config.get("m_keep") is None:
        errors.append(f"m_keep is required for the {sampler} sampler")

    noise = config.get("noise", {}) if isinstance(config.get("noise"), dict) else {}
    _require_non_negative_number(errors, "noise.additive", noise.get("additive"))
    _require_non_negative_number(errors, "noise.multiplicative", noise.get("multiplicative"))

    _require_positive_int(errors, "trials", config.get("trials"))
    _require_positive_int(errors, "threads", config.get("threads"))

    if errors:
        raise ConfigError("Config errors:\n- " + "\n- ".join(errors))


def default_k_steps(n: int, epsilon: float) -> int:
    """Angular steps sized as 50 n ln(n) / epsilon."""
    if n <= 1:
        return 1
    return max(1, math.ceil(50.0 / epsilon * n * math.log(n)))


def resolve_alecton_config(
    config: dict[str, Any],
    n: int,
    eigengap: float | None,
    sigma_a_sq: float,
) -> AlectonConfig:
    """Fill unset run values with defaults sized for dimension n and build the frozen config."""
    p = int(config.get("p") or 1)
    q = int(config.get("q") or p)
    epsilon = float(config.get("epsilon") or DEFAULTS["epsilon"])
    delta = config.get("eigengap")
    if delta is None:
        delta = eigengap
    eta = config.get("eta")
    if eta is None:
        if delta is None or delta <= 0:
            raise ConfigError("eta must be set when the eigengap is unknown")
        if sigma_a_sq <= 0:
            raise ConfigError("eta must be set for a deterministic sampler")
        # Largest step with gamma = 1.
        eta = delta * epsilon / (2.0 * n * sigma_a_sq * p * p * (p + epsilon))
    k_steps = config.get("k_steps") or default_k_steps(n, epsilon)
    trace_every = config.get("trace_every")
    if trace_every is None:
        trace_every = max(1, k_steps // 1000)
    renorm_every = config.get("renorm_every")
    return AlectonConfig(
        n=n,
        p=p,
        q=q,
        epsilon=epsilon,
        eta=float(eta),
        k_steps=int(k_steps),
        l_steps=int(config.get("l_steps") or DEFAULTS["l_steps"]),
        seed=int(config.get("seed") or 0),
        renorm_every=int(DEFAULTS["renorm_every"] if renorm_every is None else renorm_every),
        trace_every=int(trace_every),
        eigengap=None if delta is None else float(delta),
    )
