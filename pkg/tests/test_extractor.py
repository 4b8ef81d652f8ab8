import io
import json

import pytest
from PIL import Image

from rasterdeck.errors import BackendError, ExtractionFailedError
from rasterdeck.extractor import (
    BackendRequest,
    FixtureBackend,
    build_prompt,
    cache_dir_for,
    extract_layout_from_image,
    make_backend,
    strip_code_fences,
)

from conftest import make_noise_image, write_fixture_replies


def image_bytes(width=1600, height=900, seed=0) -> bytes:
    buf = io.BytesIO()
    make_noise_image(width, height, seed).save(buf, format="PNG")
    return buf.getvalue()


def request_for(data: bytes, prompt: str = None, retries: int = 2,
                model: str = "test-model") -> BackendRequest:
    image = Image.open(io.BytesIO(data))
    return BackendRequest(
        image_bytes=data, image_width=image.width, image_height=image.height,
        prompt=prompt or build_prompt(image.width, image.height),
        model_id=model, max_retries=retries)


class ScriptedBackend:
    """Returns queued replies and records each prompt it was sent."""

    def __init__(self, *replies: str):
        self.replies = list(replies)
        self.prompts: list[str] = []

    def generate(self, image_bytes: bytes, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self.replies:
            raise BackendError("script exhausted")
        return self.replies.pop(0)


class TestBuildPrompt:
    def test_contains_dimensions_and_json_directive(self):
        prompt = build_prompt(1600, 900, False)
        assert "1600" in prompt and "900" in prompt
        assert "JSON only" in prompt
        assert "background_sample" not in prompt

    def test_degenerate_dimensions_still_wellformed(self):
        prompt = build_prompt(1, 1, False)
        assert '"width": 1' in prompt and '"height": 1' in prompt

    def test_background_vocabulary(self):
        prompt = build_prompt(1600, 900, True)
        assert "background_sample" in prompt
        assert "solid" in prompt and "tile" in prompt

    def test_no_fabrication_clause(self):
        assert "fabricating text" in build_prompt(10, 10)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            build_prompt(0, 5)


class TestStripCodeFences:
    def test_json_fence(self):
        assert strip_code_fences("```json\n{\"a\": 1}\n```") == '{"a": 1}'

    def test_bare_fence(self):
        assert strip_code_fences("```\n{}\n```") == "{}"

    def test_plain_text_untouched(self):
        assert strip_code_fences('{"a": 1}') == '{"a": 1}'


class TestExtraction:
    def test_fixture_replay(self, tmp_path, sample_layout_text):
        replies = write_fixture_replies(tmp_path / "replies", sample_layout_text)
        backend = FixtureBackend(replies)
        data = image_bytes()
        result = extract_layout_from_image(request_for(data), backend,
                                           tmp_path / "cache")
        assert result.attempts == 1
        assert len(result.layout.regions) == 2
        assert [r.id for r in result.layout.regions] == ["title", "image_social_proof"]

    def test_retry_after_malformed_reply(self, tmp_path, sample_layout_text):
        backend = ScriptedBackend("this is not json", sample_layout_text)
        result = extract_layout_from_image(request_for(image_bytes()), backend,
                                           tmp_path / "cache")
        assert result.attempts == 2
        assert len(result.layout.regions) == 2
        # retry prompt = original prompt + appended error feedback
        assert backend.prompts[1].startswith(backend.prompts[0])
        assert "violated the region schema" in backend.prompts[1]

    def test_retry_feedback_names_offending_field(self, tmp_path, sample_layout_text):
        bad = json.loads(sample_layout_text)
        bad["regions"][0]["text"] = "   "
        backend = ScriptedBackend(json.dumps(bad), sample_layout_text)
        extract_layout_from_image(request_for(image_bytes()), backend,
                                  tmp_path / "cache")
        assert "title" in backend.prompts[1]
        assert "non-empty after whitespace normalization" in backend.prompts[1]

    def test_retries_exhausted(self, tmp_path):
        backend = ScriptedBackend("garbage", "garbage", "garbage")
        request = request_for(image_bytes(), retries=1)
        with pytest.raises(ExtractionFailedError) as excinfo:
            extract_layout_from_image(request, backend, tmp_path / "cache")
        assert excinfo.value.attempts == 2
        assert len(backend.prompts) == 2
        assert excinfo.value.issues

    def test_fenced_reply_is_repaired(self, tmp_path, sample_layout_text):
        backend = ScriptedBackend(f"```json\n{sample_layout_text}\n```")
        result = extract_layout_from_image(request_for(image_bytes()), backend,
                                           tmp_path / "cache")
        assert result.attempts == 1

    def test_postprocessing_applied(self, tmp_path, sample_layout_text):
        doc = json.loads(sample_layout_text)
        doc["regions"][0]["bbox_px"]["x"] = -5.0
        backend = ScriptedBackend(json.dumps(doc))
        result = extract_layout_from_image(request_for(image_bytes()), backend,
                                           tmp_path / "cache")
        assert result.layout.regions[0].bbox.x == 0.0

    def test_background_sample_captured(self, tmp_path, sample_layout_text):
        doc = json.loads(sample_layout_text)
        doc["background_sample"] = {"bbox_px": {"x": 0, "y": 0, "w": 20, "h": 20},
                                    "mode": "solid"}
        backend = ScriptedBackend(json.dumps(doc))
        result = extract_layout_from_image(request_for(image_bytes()), backend,
                                           tmp_path / "cache")
        assert result.background is not None
        assert result.background.mode == "solid"


class TestCache:
    def test_artifacts_written(self, tmp_path, sample_layout_text):
        data = image_bytes()
        backend = ScriptedBackend(sample_layout_text)
        extract_layout_from_image(request_for(data), backend, tmp_path)
        cache = cache_dir_for(tmp_path, data, "test-model")
        assert (cache / "raw.json").read_text() == sample_layout_text
        assert (cache / "validated.json").exists()
        assert (cache / "overlay.png").exists()
        overlay = Image.open(cache / "overlay.png")
        assert overlay.size == (1600, 900)

    def test_cache_hit_skips_backend(self, tmp_path, sample_layout_text):
        data = image_bytes()
        first = ScriptedBackend(sample_layout_text)
        result1 = extract_layout_from_image(request_for(data), first, tmp_path)
        second = ScriptedBackend()  # any call would raise
        result2 = extract_layout_from_image(request_for(data), second, tmp_path)
        assert second.prompts == []
        assert result2.cache_hit is True
        assert result2.layout == result1.layout
        assert result2.attempts == result1.attempts

    def test_prompt_change_invalidates_cache(self, tmp_path, sample_layout_text):
        data = image_bytes()
        extract_layout_from_image(request_for(data), ScriptedBackend(sample_layout_text),
                                  tmp_path)
        other = ScriptedBackend(sample_layout_text)
        request = request_for(data, prompt=build_prompt(1600, 900, True))
        result = extract_layout_from_image(request, other, tmp_path)
        assert result.cache_hit is False
        assert len(other.prompts) == 1

    def test_distinct_models_cached_separately(self, tmp_path, sample_layout_text):
        data = image_bytes()
        extract_layout_from_image(request_for(data, model="m/one"),
                                  ScriptedBackend(sample_layout_text), tmp_path)
        backend = ScriptedBackend(sample_layout_text)
        extract_layout_from_image(request_for(data, model="m/two"), backend, tmp_path)
        assert len(backend.prompts) == 1
        assert cache_dir_for(tmp_path, data, "m/one").exists()
        assert "m_one" in str(cache_dir_for(tmp_path, data, "m/one"))

    def test_determinism_with_fixture_backend(self, tmp_path, sample_layout_text):
        data = image_bytes()
        results = []
        for run in range(2):
            replies = write_fixture_replies(tmp_path / f"replies{run}",
                                            sample_layout_text)
            results.append(extract_layout_from_image(
                request_for(data), FixtureBackend(replies), tmp_path / f"c{run}"))
        assert results[0].layout == results[1].layout
        assert results[0].raw_json == results[1].raw_json
        assert results[0].attempts == results[1].attempts


class TestFixtureBackend:
    def test_replays_in_sorted_order(self, tmp_path):
        replies = write_fixture_replies(tmp_path, "first", "second")
        backend = FixtureBackend(replies)
        assert backend.generate(b"", "p") == "first"
        assert backend.generate(b"", "p") == "second"
        with pytest.raises(BackendError):
            backend.generate(b"", "p")

    def test_make_backend_scheme(self, tmp_path):
        backend = make_backend(f"fixture://{tmp_path}", "m")
        assert isinstance(backend, FixtureBackend)
