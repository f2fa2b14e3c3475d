"""Configuration files for protocols and campaigns.

Files are TOML. A flat file of ``key = value`` lines is valid TOML, so a
protocol file can be as small as::

    kind = "adabo"
    lambda = 14400
    gamma = 3600

Campaign files use a ``[campaign]`` table and an optional ``[protocol]``
table with the same keys as a protocol file.
"""

from __future__ import annotations

import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .experiment import CampaignSpec
from .protocols import ConfigError, ProtocolConfig

# file key -> ProtocolConfig field
PROTOCOL_KEYS = {
    "kind": "kind",
    "protocol": "kind",
    "tau": "tau",
    "lambda": "lam",
    "lam": "lam",
    "delta": "delta",
    "gamma": "gamma",
    "sigma": "sigma",
    "k": "k_tracked",
    "k_tracked": "k_tracked",
    "sms_capacity": "sms_capacity",
    "sms_refresh_interval": "sms_refresh_interval",
    "setup_duration": "setup_duration",
    "max_exchanges": "max_exchanges",
    "base_cooperation": "base_cooperation",
    "booking_assignment": "booking_assignment",
    "admin_setup_slot": "admin_setup_slot",
    "strict_cap": "strict_cap",
    "flip_exchange_rule": "flip_exchange_rule",
    "benchmark_stagger": "benchmark_stagger",
    "benchmark_tracked": "benchmark_tracked",
}

CAMPAIGN_KEYS = {f.name for f in fields(CampaignSpec)} - {"protocol"}

BUNDLED = {"paper.toml"}


def read_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def protocol_config(values: Mapping[str, Any], base: ProtocolConfig | None = None) -> ProtocolConfig:
    """Apply ``values`` (file keys) on top of ``base``; ``None`` values are skipped."""
    changes = {}
    for key, value in values.items():
        if value is None:
            continue
        name = PROTOCOL_KEYS.get(key.lower())
        if name is None:
            raise ConfigError(f"unknown protocol parameter {key!r}")
        if name == "booking_assignment" and isinstance(value, list):
            value = tuple(int(v) for v in value)
        changes[name] = value
    try:
        return (base or ProtocolConfig()).with_(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_protocol_config(path: str | Path) -> ProtocolConfig:
    data = read_toml(path)
    return protocol_config(data.get("protocol", data))


def resolve_spec_path(path: str | Path) -> Path:
    """Existing file, or a bundled spec when only its name is given."""
    p = Path(path)
    if p.exists() or p.name not in BUNDLED or p.parent != Path("."):
        return p
    return Path(str(resources.files("capsim") / "data" / p.name))


def campaign_spec(data: Mapping[str, Any], base_dir: Path | None = None) -> CampaignSpec:
    camp = dict(data.get("campaign", {}))
    unknown = set(camp) - CAMPAIGN_KEYS
    if unknown:
        raise ConfigError(f"unknown campaign keys: {sorted(unknown)}")
    if "trace" not in camp:
        raise ConfigError("campaign needs a 'trace' path")
    trace = Path(camp["trace"])
    if base_dir is not None and not trace.is_absolute():
        trace = base_dir / trace
    camp["trace"] = str(trace)
    for key in ("protocols", "lambdas"):
        if key in camp:
            camp[key] = tuple(camp[key])
    proto = protocol_config(data.get("protocol", {}))
    return CampaignSpec(protocol=proto, **camp)


def load_campaign_spec(path: str | Path) -> CampaignSpec:
    path = resolve_spec_path(path)
    return campaign_spec(read_toml(path), base_dir=path.parent)
