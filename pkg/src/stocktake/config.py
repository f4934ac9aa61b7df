"""Flat `key = value` config file shared by the server, optimizer and monitor."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .optimizer import CostModel, Thresholds


class InvalidConfig(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {line_no}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


@dataclass(frozen=True)
class ServerConfig:
    cost_model: CostModel = CostModel()
    thresholds: Thresholds = Thresholds()
    idle_threshold_seconds: float = 600.0
    fsync: bool = True
    archive_dir: str | None = None


_FLOAT_KEYS = {
    "per_unit_scan_cost",
    "category_step_cost",
    "shelving_gap_cost_per_30d",
    "score_unit_coeff",
    "score_batch_coeff",
    "idle_threshold_seconds",
}
_INT_KEYS = {"few_batch_max", "large_hu_min", "exact_cutoff"}
_BOOL_KEYS = {"fsync"}
_STR_KEYS = {"archive_dir"}


def load_server_config(path: str | Path | None) -> ServerConfig:
    if path is None:
        return ServerConfig()
    values = parse_kv(Path(path).read_text(encoding="utf-8"))
    cost_kwargs: dict = {}
    threshold_kwargs: dict = {}
    other: dict = {}
    for key, raw in values.items():
        try:
            if key in _FLOAT_KEYS:
                value: object = float(raw)
            elif key in _INT_KEYS:
                value = int(raw)
            elif key in _BOOL_KEYS:
                if raw.lower() not in ("true", "false"):
                    raise ValueError("expected true or false")
                value = raw.lower() == "true"
            elif key in _STR_KEYS:
                value = raw
            else:
                raise InvalidConfig(f"unknown config key {key!r}")
        except ValueError as exc:
            raise InvalidConfig(f"bad value for {key}: {raw!r} ({exc})") from exc
        if key in ("few_batch_max", "large_hu_min", "exact_cutoff"):
            threshold_kwargs[key] = value
        elif key in ("idle_threshold_seconds", "fsync", "archive_dir"):
            other[key] = value
        else:
            cost_kwargs[key] = value
    return ServerConfig(
        cost_model=CostModel(**cost_kwargs),
        thresholds=Thresholds(**threshold_kwargs),
        idle_threshold_seconds=other.get("idle_threshold_seconds", 600.0),
        fsync=other.get("fsync", True),
        archive_dir=other.get("archive_dir"),
    )
