"""Layout extraction through a pluggable vision-language backend.

One synchronous call per attempt: image plus prompt in, text out.  The
response must be a strict JSON region document; schema violations trigger a
retry with the validation errors appended to the prompt.  Successful
extractions leave three artifacts in the cache (raw JSON, validated JSON,
debug overlay) keyed by image digest and model id, and a repeat call with
the same key never touches the backend.

Provider choice is configuration, not code: any HTTP endpoint speaking the
chat-with-image JSON convention works, and ``fixture://<dir>`` replays
canned responses for deterministic tests and offline runs.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx
from PIL import Image

from .assets import atomic_write, render_overlay
from .errors import BackendError, ExtractionFailedError, LayoutValidationError
from .schema import (
    BackgroundSample,
    Layout,
    error_feedback,
    parse_layout,
    postprocess_layout,
    serialize_layout,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 2

ENV_BACKEND_URL = "I2S_BACKEND_URL"
ENV_BACKEND_API_KEY = "I2S_BACKEND_API_KEY"
ENV_MODEL_ID = "I2S_MODEL_ID"

_FENCE_RE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n(.*)\n\s*```\s*$", re.DOTALL)


def build_prompt(width: int, height: int, want_background: bool = False) -> str:
    """Compose the strict-JSON extraction prompt for one image."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    parts = [
        "You are given an infographic image. Identify every visual element and "
        "return a single JSON document describing it. Output JSON only: no "
        "Markdown, no code fences, no commentary.",
        f"The image is exactly {width} pixels wide and {height} pixels tall. "
        f'Set "image_px" to {{"width": {width}, "height": {height}}} and keep '
        "every bounding box within those bounds.",
        'Each element becomes one entry in "regions" with fields: "id" (a short, '
        'stable, descriptive identifier, unique in the document), "order" (integer '
        'reading order, top-to-bottom then left-to-right), "type" ("text" for '
        'editable text, "image" for icons, photos, charts, or illustrations), '
        '"bbox_px" ({"x", "y", "w", "h"} in pixels), "text" (the exact visible '
        "text for text regions, null for image regions), \"style\" (optional "
        '{"font_family", "font_size_pt", "bold"}), "crop_from_infographic" '
        "(true for image regions that should be cut out of this image), "
        '"confidence" (0 to 1), and "notes" (optional tags or context).',
        "Transcribe text exactly as shown; avoid inferring or fabricating text "
        "that is not visible in the image. Use null for anything you cannot see.",
    ]
    if want_background:
        parts.append(
            'Additionally set a top-level "background_sample" object: pick a patch '
            "of plain background free of text or figures, report it as "
            '{"bbox_px": {"x", "y", "w", "h"}, "mode": ...} where "mode" is '
            '"solid" for a near-uniform background or "tile" for a repeating '
            "texture or pattern."
        )
    return "\n\n".join(parts)


@dataclass
class BackendRequest:
    """One extraction job: the image, its exact dimensions, and the prompt."""

    image_bytes: bytes
    image_width: int
    image_height: int
    prompt: str
    model_id: str
    max_retries: int = DEFAULT_MAX_RETRIES


@dataclass
class ExtractionResult:
    raw_json: str
    layout: Layout
    background: BackgroundSample | None
    attempts: int
    elapsed_s: float
    cache_hit: bool = False


class Backend(Protocol):
    """A vision-language backend: image plus prompt in, response text out."""

    def generate(self, image_bytes: bytes, prompt: str) -> str: ...


class FixtureBackend:
    """Replays canned responses from a directory of numbered reply files.

    Files are consumed in sorted name order, one per generate() call, which
    makes multi-attempt retry behavior fully scriptable.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.calls = 0

    def generate(self, image_bytes: bytes, prompt: str) -> str:
        try:
            files = sorted(p for p in self.directory.iterdir() if p.is_file())
        except OSError as exc:
            raise BackendError(f"fixture backend directory {self.directory} "
                               f"is unreadable: {exc}") from exc
        if self.calls >= len(files):
            raise BackendError(f"fixture backend exhausted after {self.calls} "
                               f"replies from {self.directory}")
        text = files[self.calls].read_text()
        self.calls += 1
        return text


class HttpBackend:
    """Talks to a chat-with-image HTTP endpoint (OpenAI-compatible JSON).

    ``transport`` is an httpx transport override, used by tests to script
    responses without a network.
    """

    def __init__(self, url: str, model_id: str, api_key: str | None = None,
                 timeout_s: float = 120.0, transport: httpx.BaseTransport | None = None):
        self.url = url
        self.model_id = model_id
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.transport = transport

    def generate(self, image_bytes: bytes, prompt: str) -> str:
        b64 = base64.b64encode(image_bytes).decode("ascii")
        payload = {
            "model": self.model_id,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url",
                     "image_url": {"url": f"data:image/png;base64,{b64}"}},
                ],
            }],
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            with httpx.Client(transport=self.transport, timeout=self.timeout_s) as client:
                response = client.post(self.url, json=payload, headers=headers)
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except httpx.HTTPError as exc:
            raise BackendError(f"backend call to {self.url} failed: {exc}") from exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"unexpected backend response shape: {exc}") from exc


def make_backend(url: str, model_id: str, api_key: str | None = None) -> Backend:
    """Build a backend from a URL; ``fixture://<dir>`` replays canned files."""
    if url.startswith("fixture://"):
        return FixtureBackend(url[len("fixture://"):])
    return HttpBackend(url=url, model_id=model_id, api_key=api_key)


def strip_code_fences(text: str) -> str:
    """Unwrap a ```...``` fenced response; models emit them despite the prompt."""
    match = _FENCE_RE.match(text)
    return match.group(1) if match else text


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:32]


def _safe_model_dir(model_id: str) -> str:
    # Model ids may contain '/' (e.g. openrouter-style names).
    return re.sub(r"[^A-Za-z0-9._-]", "_", model_id)


def cache_dir_for(cache_root: str | Path, image_bytes: bytes, model_id: str) -> Path:
    return Path(cache_root) / "extract" / _digest(image_bytes) / _safe_model_dir(model_id)


def extract_layout_from_image(request: BackendRequest, backend: Backend,
                              cache_root: str | Path | None = None) -> ExtractionResult:
    """Run the extract-validate-retry loop and cache the artifacts.

    Total attempts never exceed ``max_retries + 1``.  Raises
    :class:`ExtractionFailedError` when every attempt produced a
    schema-invalid response, and :class:`BackendError` on transport failure.
    """
    prompt_digest = _digest(request.prompt.encode())
    cache_dir = None
    if cache_root is not None:
        cache_dir = cache_dir_for(cache_root, request.image_bytes, request.model_id)
        cached = _load_cached(cache_dir, prompt_digest)
        if cached is not None:
            return cached

    start = time.monotonic()
    prompt = request.prompt
    issues = []
    raw = ""
    for attempt in range(1, request.max_retries + 2):
        raw = backend.generate(request.image_bytes, prompt)
        try:
            layout = parse_layout(strip_code_fences(raw))
        except LayoutValidationError as exc:
            issues = exc.issues
            logger.info("attempt %d: %d schema violation(s)", attempt, len(issues))
            prompt = request.prompt + "\n\n" + error_feedback(issues)
            continue
        layout = postprocess_layout(layout)
        elapsed = time.monotonic() - start
        result = ExtractionResult(raw_json=raw, layout=layout,
                                  background=layout.background,
                                  attempts=attempt, elapsed_s=elapsed)
        if cache_dir is not None:
            _write_cache(cache_dir, request, result, prompt_digest)
        return result

    raise ExtractionFailedError(attempts=request.max_retries + 1, issues=issues)


def _load_cached(cache_dir: Path, prompt_digest: str) -> ExtractionResult | None:
    meta_path = cache_dir / "meta.json"
    validated_path = cache_dir / "validated.json"
    raw_path = cache_dir / "raw.json"
    if not (meta_path.exists() and validated_path.exists() and raw_path.exists()):
        return None
    meta = json.loads(meta_path.read_text())
    if meta.get("prompt_digest") != prompt_digest:
        return None
    layout = postprocess_layout(parse_layout(validated_path.read_text()))
    return ExtractionResult(raw_json=raw_path.read_text(), layout=layout,
                            background=layout.background,
                            attempts=int(meta.get("attempts", 1)),
                            elapsed_s=float(meta.get("elapsed_s", 0.0)),
                            cache_hit=True)


def _write_cache(cache_dir: Path, request: BackendRequest,
                 result: ExtractionResult, prompt_digest: str) -> None:
    atomic_write(cache_dir / "raw.json", result.raw_json.encode())
    atomic_write(cache_dir / "validated.json", serialize_layout(result.layout).encode())
    image = Image.open(io.BytesIO(request.image_bytes))
    atomic_write(cache_dir / "overlay.png", render_overlay(image, result.layout))
    meta = {"prompt_digest": prompt_digest, "attempts": result.attempts,
            "elapsed_s": result.elapsed_s, "model_id": request.model_id}
    atomic_write(cache_dir / "meta.json", (json.dumps(meta, indent=2) + "\n").encode())
