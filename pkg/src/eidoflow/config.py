"""Pipeline configuration: one YAML file, relative paths resolved against it.

Example::

    log: events.jsonl
    gazetteer: gazetteer.jsonl
    fixtureClient: geocoder_fixture.json
    correlation:
      weights: [1, 1, 1]
      tau: 0.55
      temporalHalfLifeHours: 2
      spatialHalfLifeMeters: 1000
      windowHours: 24          # null disables the window
      spatialGateKm: 50        # null disables the gate
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import timedelta
from pathlib import Path
from typing import Any, Mapping

import yaml

from .correlator import CorrelationConfig
from .geocoder import GeocoderConfig

_TOP_KEYS = {
    "log", "gazetteer", "fixtureClient", "geocoderCache", "incidentTypes", "codeMappings",
    "templates", "bindings", "categoryAffinity", "fsync", "strict",
    "correlation", "geocoder", "transform",
}
_PATH_KEYS = ("log", "gazetteer", "fixtureClient", "geocoderCache", "incidentTypes", "codeMappings",
              "templates", "bindings", "categoryAffinity")
# paths that are created by the pipeline rather than read
_OUTPUT_PATHS = ("log", "geocoderCache")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TransformSettings:
    default_year: int | None = None
    utc_offset: str = "+00:00"
    source_descriptor: str = "legacy CAD"


@dataclass(frozen=True)
class PipelineConfig:
    log: Path | None = None
    gazetteer: Path | None = None
    fixture_client: Path | None = None
    geocoder_cache: Path | None = None
    incident_types: Path | None = None
    code_mappings: Path | None = None
    templates: Path | None = None
    bindings: Path | None = None
    category_affinity: Path | None = None
    fsync: str = "always"
    strict: bool = False
    correlation: CorrelationConfig = field(default_factory=CorrelationConfig)
    geocoder: GeocoderConfig = field(default_factory=GeocoderConfig)
    transform: TransformSettings = field(default_factory=TransformSettings)

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text("utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base: Path = Path(".")) -> "PipelineConfig":
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        paths: dict[str, Path | None] = {}
        for key in _PATH_KEYS:
            value = raw.get(key)
            if value is None:
                paths[key] = None
                continue
            p = Path(value)
            p = p if p.is_absolute() else base / p
            if key not in _OUTPUT_PATHS and not p.exists():
                raise ConfigError(f"{key}: file not found: {p}")
            paths[key] = p
        fsync = raw.get("fsync", "always")
        if fsync not in ("always", "never"):
            raise ConfigError(f"fsync must be 'always' or 'never', got {fsync!r}")
        try:
            correlation = _correlation(raw.get("correlation") or {})
            geocoder = _geocoder(raw.get("geocoder") or {}, paths["categoryAffinity"])
            transform = _transform(raw.get("transform") or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(
            log=paths["log"],
            gazetteer=paths["gazetteer"],
            fixture_client=paths["fixtureClient"],
            geocoder_cache=paths["geocoderCache"],
            incident_types=paths["incidentTypes"],
            code_mappings=paths["codeMappings"],
            templates=paths["templates"],
            bindings=paths["bindings"],
            category_affinity=paths["categoryAffinity"],
            fsync=fsync,
            strict=bool(raw.get("strict", False)),
            correlation=correlation,
            geocoder=geocoder,
            transform=transform,
        )

    def with_overrides(
        self,
        *,
        log: str | Path | None = None,
        tau: float | None = None,
        weights: tuple[float, float, float] | None = None,
        strict: bool | None = None,
    ) -> "PipelineConfig":
        """CLI flags take precedence over the file."""
        cfg = self
        corr = cfg.correlation
        try:
            if tau is not None:
                corr = replace(corr, tau=tau)
            if weights is not None:
                corr = corr.with_weights(*weights)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg = replace(cfg, correlation=corr)
        if log is not None:
            cfg = replace(cfg, log=Path(log))
        if strict is not None:
            cfg = replace(cfg, strict=strict)
        return cfg


def _check_keys(section: str, raw: Mapping, allowed: set[str]) -> None:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{section} must be a mapping")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def _correlation(raw: Mapping) -> CorrelationConfig:
    _check_keys("correlation", raw, {
        "weights", "tau", "temporalHalfLifeHours", "spatialHalfLifeMeters",
        "windowHours", "spatialGateKm", "strictMissing"})
    base = CorrelationConfig()
    weights = raw.get("weights", base.weights)
    if len(weights) != 3:
        raise ConfigError("correlation.weights needs exactly three values (t, g, s)")
    window = raw.get("windowHours", base.window.total_seconds() / 3600 if base.window else None)
    gate = raw.get("spatialGateKm", base.spatial_gate_m / 1000 if base.spatial_gate_m else None)
    return CorrelationConfig(
        w_t=float(weights[0]),
        w_g=float(weights[1]),
        w_s=float(weights[2]),
        tau=float(raw.get("tau", base.tau)),
        temporal_half_life=timedelta(hours=float(raw.get("temporalHalfLifeHours", 2))),
        spatial_half_life_m=float(raw.get("spatialHalfLifeMeters", base.spatial_half_life_m)),
        window=None if window is None else timedelta(hours=float(window)),
        spatial_gate_m=None if gate is None else float(gate) * 1000,
        strict_missing=bool(raw.get("strictMissing", False)),
    )


def _geocoder(raw: Mapping, affinity_path: Path | None) -> GeocoderConfig:
    _check_keys("geocoder", raw, {
        "matchWeight", "contextWeight", "fallbackThreshold", "proximityHalfLifeMeters", "jurisdiction"})
    base = GeocoderConfig()
    kwargs: dict[str, Any] = dict(
        match_weight=float(raw.get("matchWeight", base.match_weight)),
        context_weight=float(raw.get("contextWeight", base.context_weight)),
        fallback_threshold=float(raw.get("fallbackThreshold", base.fallback_threshold)),
        proximity_half_life_m=float(raw.get("proximityHalfLifeMeters", base.proximity_half_life_m)),
        jurisdiction=raw.get("jurisdiction"),
    )
    if affinity_path is not None:
        data = yaml.safe_load(affinity_path.read_text("utf-8")) or {}
        kwargs["category_affinity"] = {k: frozenset(c.casefold() for c in v) for k, v in data.items()}
    return GeocoderConfig(**kwargs)


def _transform(raw: Mapping) -> TransformSettings:
    _check_keys("transform", raw, {"defaultYear", "utcOffset", "sourceDescriptor"})
    year = raw.get("defaultYear")
    return TransformSettings(
        default_year=None if year is None else int(year),
        utc_offset=str(raw.get("utcOffset", "+00:00")),
        source_descriptor=str(raw.get("sourceDescriptor", "legacy CAD")),
    )
