import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from rasterdeck.schema import Layout, parse_layout

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture()
def sample_layout_text() -> str:
    return (FIXTURES / "sample_layout.json").read_text()


@pytest.fixture()
def sample_layout(sample_layout_text) -> Layout:
    return parse_layout(sample_layout_text)


def make_noise_image(width: int, height: int, seed: int = 0) -> Image.Image:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return Image.fromarray(pixels, mode="RGB")


@pytest.fixture()
def sample_image() -> Image.Image:
    # 1600x900 to match the sample layout's image_px.
    return make_noise_image(1600, 900, seed=7)


@pytest.fixture()
def sample_image_path(tmp_path, sample_image) -> Path:
    path = tmp_path / "infographic.png"
    sample_image.save(path)
    return path


@pytest.fixture()
def sample_layout_path(tmp_path, sample_layout_text) -> Path:
    path = tmp_path / "layout.json"
    path.write_text(sample_layout_text)
    return path


def write_fixture_replies(directory: Path, *replies: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for i, reply in enumerate(replies):
        (directory / f"{i:03d}.txt").write_text(reply)
    return directory


def load_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())
