"""Raster asset handling: crops, content-addressed storage, backgrounds.

Image regions are cropped from the source with right/bottom padding (tight
model boxes tend to clip strokes), encoded as PNG, and stored under a name
derived from the bytes so identical content deduplicates.  A manifest maps
content names to uploaded URLs so warm reruns skip the remote entirely.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np
from PIL import Image, ImageDraw

from .errors import UploadError
from .schema import BackgroundSample, Layout, PixelBox

logger = logging.getLogger(__name__)

DEFAULT_PAD_PX = 10
# 32 hex chars of a 256-bit digest: short filenames, negligible collision risk.
NAME_DIGEST_CHARS = 32

_OUTLINE_COLORS = {"text": (229, 57, 53), "image": (30, 136, 229)}
_OUTLINE_WIDTH = 3


@dataclass
class AssetRef:
    """A stored asset: content-derived name, upload URL, size in bytes."""

    content_name: str
    byte_length: int
    url: str | None = None


def content_name(data: bytes) -> str:
    """Deterministic content-addressed file name for asset bytes."""
    if not data:
        raise ValueError("cannot name an empty byte sequence")
    digest = hashlib.sha256(data).hexdigest()[:NAME_DIGEST_CHARS]
    return f"{digest}.png"


def _encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def crop_region(image: Image.Image, box: PixelBox, pad_px: int = DEFAULT_PAD_PX) -> bytes:
    """Crop a region with right/bottom padding, clamped to image bounds.

    The top-left corner is preserved so the crop stays aligned with any
    elements drawn over it.  Sub-pixel coordinates round outward (floor for
    the origin, ceil for the far edge).  Returns PNG bytes.
    """
    width, height = image.size
    x2 = min(box.x + box.w + pad_px, width)
    y2 = min(box.y + box.h + pad_px, height)
    left, top = math.floor(box.x), math.floor(box.y)
    right, bottom = math.ceil(x2), math.ceil(y2)
    if left < 0 or top < 0 or right <= left or bottom <= top:
        raise ValueError(f"degenerate crop for box {box} in {width}x{height} image")
    return _encode_png(image.crop((left, top, right, bottom)))


class Uploader(Protocol):
    """Puts asset bytes somewhere HTTPS-accessible and returns the URL."""

    def upload(self, name: str, data: bytes) -> str: ...


class FilesystemUploader:
    """Writes assets to a directory served by the bundled static route.

    Useful for tests and local development; the returned URLs point at the
    service's ``/assets/{name}`` endpoint under ``base_url``.
    """

    def __init__(self, directory: str | Path,
                 base_url: str = "https://assets.local/assets"):
        self.directory = Path(directory)
        self.base_url = base_url.rstrip("/")

    def upload(self, name: str, data: bytes) -> str:
        self.directory.mkdir(parents=True, exist_ok=True)
        atomic_write(self.directory / name, data)
        return f"{self.base_url}/{name}"


class HttpUploader:
    """PUTs asset bytes to a generic HTTPS endpoint.

    The asset URL is taken from the response body ({"url": ...}) when the
    endpoint returns JSON, otherwise the PUT URL itself is assumed public.
    """

    def __init__(self, endpoint: str, api_key: str | None = None,
                 timeout_s: float = 30.0, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.transport = transport

    def upload(self, name: str, data: bytes) -> str:
        url = f"{self.endpoint}/{name}"
        headers = {"Content-Type": "image/png"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            with httpx.Client(transport=self.transport, timeout=self.timeout_s) as client:
                response = client.put(url, content=data, headers=headers)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise UploadError(f"upload of {name} to {url} failed: {exc}") from exc
        try:
            body = response.json()
            if isinstance(body, dict) and isinstance(body.get("url"), str):
                return body["url"]
        except ValueError:
            pass
        return url


def atomic_write(path: Path, data: bytes) -> None:
    # Concurrent writers of the same content-addressed name are harmless:
    # last rename wins and the bytes are identical by construction.
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class AssetStore:
    """Content-addressed store plus a persisted name -> URL manifest."""

    def __init__(self, cache_dir: str | Path):
        self.assets_dir = Path(cache_dir) / "assets"
        self.manifest_path = self.assets_dir / "manifest.json"
        self._manifest: dict[str, str] = {}
        if self.manifest_path.exists():
            self._manifest = json.loads(self.manifest_path.read_text())

    def _save_manifest(self) -> None:
        payload = json.dumps(self._manifest, indent=2, sort_keys=True) + "\n"
        atomic_write(self.manifest_path, payload.encode())

    def url_for(self, name: str) -> str | None:
        return self._manifest.get(name)

    def store_and_upload(self, data: bytes, uploader: Uploader) -> AssetRef:
        """Persist bytes locally and upload once per distinct content.

        A name already present in the manifest short-circuits the uploader,
        both within a run and across runs (the manifest is on disk).
        """
        name = content_name(data)
        path = self.assets_dir / name
        if not path.exists():
            atomic_write(path, data)
        url = self._manifest.get(name)
        if url is None:
            url = uploader.upload(name, data)
            if not url.startswith("https://"):
                raise UploadError(f"uploader returned non-HTTPS URL {url!r}; "
                                  "the presentation service requires https")
            self._manifest[name] = url
            self._save_manifest()
        else:
            logger.debug("asset %s already uploaded to %s", name, url)
        return AssetRef(content_name=name, byte_length=len(data), url=url)


# ---------------------------------------------------------------------------
# Background synthesis and debug overlays


def _crop_patch(image: Image.Image, box: PixelBox) -> Image.Image:
    left, top = math.floor(box.x), math.floor(box.y)
    right, bottom = math.ceil(box.x + box.w), math.ceil(box.y + box.h)
    right = min(right, image.size[0])
    bottom = min(bottom, image.size[1])
    if right <= left or bottom <= top:
        raise ValueError(f"degenerate background patch {box}")
    return image.crop((left, top, right, bottom))


def synthesize_background(image: Image.Image, sample: BackgroundSample,
                          out_size: tuple[int, int]) -> bytes:
    """Expand a sampled patch into a full background image (PNG bytes).

    solid: fill with the patch's per-channel mean color.
    tile:  repeat the patch from the origin; edge tiles are cropped to fit.
    """
    out_w, out_h = out_size
    if out_w <= 0 or out_h <= 0:
        raise ValueError(f"output size must be positive, got {out_size}")
    patch = np.asarray(_crop_patch(image.convert("RGB"), sample.bbox))
    if sample.mode == "solid":
        mean = patch.reshape(-1, patch.shape[2]).mean(axis=0)
        color = np.rint(mean).astype(np.uint8)
        canvas = np.broadcast_to(color, (out_h, out_w, 3)).copy()
    else:
        ph, pw = patch.shape[:2]
        reps_y = -(-out_h // ph)
        reps_x = -(-out_w // pw)
        canvas = np.tile(patch, (reps_y, reps_x, 1))[:out_h, :out_w]
    return _encode_png(Image.fromarray(canvas, mode="RGB"))


def render_overlay(image: Image.Image, layout: Layout) -> bytes:
    """Draw labeled region outlines over a copy of the image (PNG bytes).

    Text and image regions get distinct outline colors; each box is tagged
    with its region id.  Output dimensions equal the input's.
    """
    canvas = image.convert("RGB").copy()
    draw = ImageDraw.Draw(canvas)
    for region in layout.regions:
        color = _OUTLINE_COLORS.get(region.kind, (120, 120, 120))
        box = region.bbox
        left, top = round(box.x), round(box.y)
        right, bottom = round(box.right), round(box.bottom)
        right = min(right, canvas.size[0] - 1)
        bottom = min(bottom, canvas.size[1] - 1)
        draw.rectangle((left, top, right, bottom), outline=color,
                       width=_OUTLINE_WIDTH)
        draw.text((left + _OUTLINE_WIDTH + 2, top + _OUTLINE_WIDTH + 1),
                  region.id, fill=color)
    return _encode_png(canvas)
