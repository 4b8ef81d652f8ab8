"""Pipeline configuration: defaults, config file, flags, environment.

Precedence, lowest to highest: built-in defaults, config file values,
command-line flags, environment variables (I2S_*).  The config file is a
single flat JSON document mirroring the field names below.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from .errors import InputIOError
from .extractor import DEFAULT_MAX_RETRIES, ENV_BACKEND_API_KEY, ENV_BACKEND_URL, ENV_MODEL_ID
from .geometry import (
    DEFAULT_GAP_PT,
    DEFAULT_MARGIN_PT,
    DEFAULT_PAGE_HEIGHT_PT,
    DEFAULT_PAGE_WIDTH_PT,
    SlidePageSize,
)
from .slides import DEFAULT_SLIDES_API_BASE, ENV_SLIDES_TOKEN

logger = logging.getLogger(__name__)

_ENV_MAP = {
    ENV_BACKEND_URL: "backend_url",
    ENV_BACKEND_API_KEY: "backend_api_key",
    ENV_MODEL_ID: "model_id",
    ENV_SLIDES_TOKEN: "slides_token",
}


def default_cache_dir() -> Path:
    return Path.home() / ".cache" / "rasterdeck"


@dataclass(frozen=True)
class PipelineConfig:
    cache_dir: Path = default_cache_dir()
    page_width_pt: float = DEFAULT_PAGE_WIDTH_PT
    page_height_pt: float = DEFAULT_PAGE_HEIGHT_PT
    synthesize_background: bool = False
    expand_widths: bool = False
    merge_adjacent_text: bool = False
    pad_px: int = 10
    margin_pt: float = DEFAULT_MARGIN_PT
    gap_pt: float = DEFAULT_GAP_PT
    backend_url: str | None = None
    backend_api_key: str | None = None
    model_id: str = "default"
    max_retries: int = DEFAULT_MAX_RETRIES
    uploader: str = "filesystem"  # "filesystem" or "http"
    uploader_endpoint: str | None = None
    uploader_api_key: str | None = None
    asset_base_url: str = "https://assets.local/assets"
    match_iou_threshold: float = 0.0
    slides_api_base: str = DEFAULT_SLIDES_API_BASE
    slides_token: str | None = None

    def __post_init__(self) -> None:
        if self.page_width_pt <= 0 or self.page_height_pt <= 0:
            raise ValueError("page size must be positive")
        if self.pad_px < 0:
            raise ValueError("pad_px must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.match_iou_threshold < 1.0:
            raise ValueError("match_iou_threshold must lie in [0, 1)")
        if self.uploader not in ("filesystem", "http"):
            raise ValueError(f"unknown uploader {self.uploader!r}")

    @property
    def page_size(self) -> SlidePageSize:
        return SlidePageSize(self.page_width_pt, self.page_height_pt)


def parse_page_size(value: str) -> tuple[float, float]:
    """Parse a WxH flag value like ``720x405``."""
    try:
        w, h = value.lower().split("x")
        return float(w), float(h)
    except ValueError:
        raise ValueError(f"page size must look like 720x405, got {value!r}") from None


_FIELD_NAMES = {f.name for f in fields(PipelineConfig)}


def _coerce(updates: dict) -> dict:
    out = dict(updates)
    if "page_size" in out:
        w, h = parse_page_size(str(out.pop("page_size")))
        out["page_width_pt"] = w
        out["page_height_pt"] = h
    if "cache_dir" in out and out["cache_dir"] is not None:
        out["cache_dir"] = Path(out["cache_dir"])
    unknown = set(out) - _FIELD_NAMES
    for key in sorted(unknown):
        logger.warning("ignoring unknown config key %r", key)
        out.pop(key)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise InputIOError(f"cannot read config file {path}: {exc}") from exc
    doc = json.loads(raw)
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path} must contain a JSON object")
    return doc


def resolve_config(file_values: dict | None = None,
                   flag_values: dict | None = None,
                   env: Mapping[str, str] | None = None) -> PipelineConfig:
    """Layer file < flags < environment over the defaults.

    ``flag_values`` entries that are None mean "not given" and are skipped.
    """
    env = os.environ if env is None else env
    config = PipelineConfig()
    if file_values:
        config = replace(config, **_coerce(file_values))
    if flag_values:
        given = {k: v for k, v in flag_values.items() if v is not None}
        config = replace(config, **_coerce(given))
    env_updates = {field: env[var] for var, field in _ENV_MAP.items() if var in env}
    if env_updates:
        config = replace(config, **env_updates)
    return config
