import math
from pathlib import Path

import pytest

from alecton.config import (
    ConfigError,
    apply_cli_overrides,
    default_config,
    default_k_steps,
    load_config,
    resolve_alecton_config,
    validate_config,
)


def test_validate_config_reports_enum_and_range_errors() -> None:
    bad = default_config()
    bad.update(
        {
            "seed": "zero",
            "eta": -1.0,
            "k_steps": 0,
            "p": 3,
            "q": 2,
            "epsilon": 1.5,
            "renorm_every": -1,
            "sampler": "bogus",
            "noise": {"additive": -0.1, "multiplicative": "loud"},
            "trials": 0,
        }
    )

    with pytest.raises(ConfigError) as exc:
        validate_config(bad)

    message = str(exc.value)
    assert message.startswith("Config errors:\n- ")
    assert "seed must be an integer" in message
    assert "eta must be > 0" in message
    assert "k_steps must be > 0" in message
    assert "q must be >= p" in message
    assert "epsilon must be a number in (0, 1)" in message
    assert "renorm_every must be >= 0" in message
    assert "sampler must be one of" in message
    assert "noise.additive must be >= 0" in message
    assert "noise.multiplicative must be a finite number" in message
    assert "trials must be > 0" in message


def test_validate_config_requires_m_keep_for_subspace_samplers() -> None:
    config = default_config()
    config["sampler"] = "subspace-split"

    with pytest.raises(ConfigError) as exc:
        validate_config(config)

    assert "m_keep is required for the subspace-split sampler" in str(exc.value)


def test_validate_config_accepts_minimal_valid_config() -> None:
    good = default_config()
    good.update({"eta": 0.01, "sampler": "subspace", "m_keep": 4})

    validate_config(good)


def test_load_config_merges_file_over_defaults(tmp_path) -> None:
    path = tmp_path / "run.json"
    path.write_text('{"eta": 0.002, "noise": {"additive": 0.1}}', encoding="utf-8")

    config = load_config(str(path))

    assert config["eta"] == 0.002
    assert config["noise"] == {"additive": 0.1, "multiplicative": 0.0}
    assert config["l_steps"] == 1000


def test_load_config_rejects_non_object(tmp_path) -> None:
    path = tmp_path / "run.json"
    path.write_text("[1, 2]", encoding="utf-8")

    with pytest.raises(ConfigError):
        load_config(str(path))


def test_apply_cli_overrides_skips_unset_flags() -> None:
    config = default_config()

    apply_cli_overrides(config, {"eta": 0.5, "k_steps": None, "force": False, "noise_mul": 0.2, "command": "run"})

    assert config["eta"] == 0.5
    assert config["k_steps"] is None
    assert config["force"] is False
    assert config["noise"]["multiplicative"] == 0.2
    assert "command" not in config


def test_default_k_steps_formula() -> None:
    assert default_k_steps(1, 0.1) == 1
    assert default_k_steps(100, 0.1) == math.ceil(500.0 * 100 * math.log(100))


def test_resolve_fills_largest_feasible_step() -> None:
    config = default_config()

    resolved = resolve_alecton_config(config, 100, 1.0, 1.0)

    # gamma = 2 n sigma p^2 (p + eps) eta / (delta eps) = 1
    assert resolved.eta == pytest.approx(0.1 / (2.0 * 100 * 1.1))
    assert resolved.k_steps == default_k_steps(100, 0.1)
    assert resolved.trace_every == resolved.k_steps // 1000
    assert resolved.q == 1
    assert resolved.eigengap == 1.0
    assert resolved.renorm_every == 1000


def test_resolve_keeps_explicit_values() -> None:
    config = default_config()
    config.update({"eta": 0.3, "k_steps": 50, "p": 2, "eigengap": 0.5, "renorm_every": 0, "trace_every": 5})

    resolved = resolve_alecton_config(config, 10, 2.0, 3.0)

    assert resolved.eta == 0.3
    assert resolved.k_steps == 50
    assert resolved.q == 2
    assert resolved.eigengap == 0.5
    assert resolved.renorm_every == 0
    assert resolved.trace_every == 5


def test_resolve_needs_eta_without_eigengap() -> None:
    with pytest.raises(ConfigError) as exc:
        resolve_alecton_config(default_config(), 10, None, 3.0)

    assert "eta must be set" in str(exc.value)


def test_resolve_needs_eta_for_deterministic_sampler() -> None:
    with pytest.raises(ConfigError):
        resolve_alecton_config(default_config(), 10, 1.0, 0.0)


def test_example_config_is_valid() -> None:
    config = load_config(str(Path(__file__).resolve().parents[1] / "config.example.json"))

    validate_config(config)

    assert config["noise"] == {"additive": 0.0, "multiplicative": 0.05}
    assert config["eta"] is None
