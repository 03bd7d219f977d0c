"""Chat and sidecar clients over a mock HTTP transport."""

import base64
import io
import json

import httpx
import pytest
from PIL import Image

from docqa.errors import ApiError, EmptyCompletion, ShapeError, TransportError
from docqa.gateway import (
    ChatGateway,
    ChatMessage,
    GenerationParams,
    ImagePart,
    ModelEndpoint,
    SidecarClient,
    TextPart,
    downscale_png,
)


def completion_body(text="OK"):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def make_gateway(handler):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return ChatGateway(client=client, sleep=lambda _t: None)


ENDPOINT = ModelEndpoint(base_url="http://model.local/v1", model_name="m", max_retries=2)
MESSAGES = [ChatMessage.text("user", "hi")]
PARAMS = GenerationParams()


class TestChatComplete:
    def test_echo(self):
        gw = make_gateway(lambda req: httpx.Response(200, json=completion_body("OK")))
        result = gw.chat_complete(ENDPOINT, MESSAGES, PARAMS)
        assert result.text == "OK"
        assert result.retry_count == 0

    def test_retry_on_429_then_success(self):
        statuses = iter([429, 200])

        def handler(request):
            status = next(statuses)
            if status == 200:
                return httpx.Response(200, json=completion_body("after retry"))
            return httpx.Response(status, text="slow down")

        result = make_gateway(handler).chat_complete(ENDPOINT, MESSAGES, PARAMS)
        assert result.text == "after retry"
        assert result.retry_count == 1

    def test_timeout_exhausts_to_transport_error(self):
        def handler(request):
            raise httpx.ReadTimeout("too slow")

        with pytest.raises(TransportError):
            make_gateway(handler).chat_complete(ENDPOINT, MESSAGES, PARAMS)

    def test_non_retryable_api_error(self):
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(400, text="bad request")

        with pytest.raises(ApiError) as exc_info:
            make_gateway(handler).chat_complete(ENDPOINT, MESSAGES, PARAMS)
        assert exc_info.value.status == 400
        assert len(calls) == 1

    def test_empty_completion(self):
        gw = make_gateway(lambda req: httpx.Response(200, json=completion_body("  ")))
        with pytest.raises(EmptyCompletion):
            gw.chat_complete(ENDPOINT, MESSAGES, PARAMS)

    def test_bounded_attempts(self):
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(503, text="down")

        with pytest.raises(TransportError):
            make_gateway(handler).chat_complete(ENDPOINT, MESSAGES, PARAMS)
        assert len(calls) == ENDPOINT.max_retries + 1

    def test_wire_format(self):
        captured = {}

        def handler(request):
            captured["body"] = json.loads(request.content)
            captured["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=completion_body())

        endpoint = ModelEndpoint(
            base_url="http://model.local/v1",
            model_name="vlm-x",
            api_key_env="TEST_MODEL_KEY",
            extra_body={"max_tokens_per_image": 2048},
        )
        png = ImagePart.from_bytes(b"\x89PNGfake")
        messages = [
            ChatMessage.text("system", "be helpful"),
            ChatMessage(role="user", parts=(TextPart("what?"), png)),
        ]
        import os

        os.environ["TEST_MODEL_KEY"] = "s3cret"
        try:
            make_gateway(handler).chat_complete(
                endpoint, messages, GenerationParams(max_new_tokens=99, temperature=0.3)
            )
        finally:
            del os.environ["TEST_MODEL_KEY"]

        body = captured["body"]
        assert body["model"] == "vlm-x"
        assert body["max_tokens"] == 99
        assert body["temperature"] == 0.3
        assert body["max_tokens_per_image"] == 2048
        assert captured["auth"] == "Bearer s3cret"
        user = body["messages"][1]
        assert user["content"][0] == {"type": "text", "text": "what?"}
        assert user["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_secret_never_in_result_or_exception(self):
        import os

        os.environ["TEST_MODEL_KEY"] = "supersecret"
        endpoint = ModelEndpoint(
            base_url="http://model.local/v1", model_name="m",
            api_key_env="TEST_MODEL_KEY", max_retries=0,
        )

        def handler(request):
            return httpx.Response(500, text="boom")

        try:
            with pytest.raises(TransportError) as exc_info:
                make_gateway(handler).chat_complete(endpoint, MESSAGES, PARAMS)
            assert "supersecret" not in str(exc_info.value)
        finally:
            del os.environ["TEST_MODEL_KEY"]


class TestMessageValidation:
    def test_image_part_only_in_user(self):
        with pytest.raises(ValueError):
            ChatMessage(role="system", parts=(ImagePart.from_bytes(b"x"),))

    def test_at_least_one_part(self):
        with pytest.raises(ValueError):
            ChatMessage(role="user", parts=())

    def test_bad_role(self):
        with pytest.raises(ValueError):
            ChatMessage.text("tool", "x")

    def test_params_validation(self):
        with pytest.raises(ValueError):
            GenerationParams(max_new_tokens=0)

    def test_endpoint_validation(self):
        with pytest.raises(ValueError):
            ModelEndpoint(base_url="http://x", model_name="m", timeout=0)


class TestDownscale:
    def _png(self, w, h):
        buf = io.BytesIO()
        Image.new("RGB", (w, h), "blue").save(buf, format="PNG")
        return buf.getvalue()

    def test_large_image_shrinks(self):
        out = downscale_png(self._png(800, 400), max_edge=200)
        img = Image.open(io.BytesIO(out))
        assert max(img.size) <= 200

    def test_small_image_untouched(self):
        png = self._png(100, 50)
        assert downscale_png(png, max_edge=200) == png


def embed_response(matrices, embedder_id="stub-x", dim=None):
    if dim is None:
        dim = len(matrices[0][0]) if matrices and matrices[0] else 0
    return {"embedder_id": embedder_id, "dim": dim, "matrices": matrices}


class TestSidecarClient:
    def make(self, handler):
        client = httpx.Client(transport=httpx.MockTransport(handler))
        return SidecarClient("http://sidecar.local/v1", client=client, sleep=lambda _t: None)

    def test_embed_text_order_and_shape(self):
        def handler(request):
            payload = json.loads(request.content)
            mats = [[[float(i), 0.0, 0.0, 0.0]] * 2 for i in range(len(payload["texts"]))]
            return httpx.Response(200, json=embed_response(mats))

        sc = self.make(handler)
        embedder_id, mats = sc.embed_texts(["a", "b", "c"])
        assert embedder_id == "stub-x"
        assert len(mats) == 3
        assert all(m.shape == (2, 4) for m in mats)
        assert mats[2][0][0] == 2.0

    def test_zero_row_matrix_rejected(self):
        handler = lambda req: httpx.Response(200, json=embed_response([[]], dim=4))
        with pytest.raises(ShapeError):
            self.make(handler).embed_texts(["a"])

    def test_dim_mismatch_within_response(self):
        body = {"embedder_id": "e", "dim": 4, "matrices": [[[1.0, 2.0]]]}
        handler = lambda req: httpx.Response(200, json=body)
        with pytest.raises(ShapeError):
            self.make(handler).embed_texts(["a"])

    def test_cardinality_mismatch(self):
        handler = lambda req: httpx.Response(
            200, json=embed_response([[[1.0, 0.0]]])
        )
        with pytest.raises(ShapeError):
            self.make(handler).embed_texts(["a", "b"])

    def test_image_queries_request_image_space(self):
        captured = {}

        def handler(request):
            captured.update(json.loads(request.content))
            return httpx.Response(200, json=embed_response([[[1.0, 0.0]]]))

        self.make(handler).embed_image_queries(["q"])
        assert captured["space"] == "image"

    def test_embed_images_base64(self):
        captured = {}

        def handler(request):
            captured.update(json.loads(request.content))
            n = len(captured["images"])
            return httpx.Response(200, json=embed_response([[[1.0, 0.0]]] * n))

        _, mats = self.make(handler).embed_images([b"pngbytes"])
        assert base64.b64decode(captured["images"][0]) == b"pngbytes"
        assert len(mats) == 1

    def test_ocr(self):
        def handler(request):
            assert request.url.path.endswith("/ocr")
            return httpx.Response(200, json={"text": "Total: 42"})

        assert self.make(handler).recognize(b"png") == "Total: 42"

    def test_empty_batch_rejected(self):
        sc = self.make(lambda req: httpx.Response(200, json={}))
        with pytest.raises(ValueError):
            sc.embed_texts([])

    def test_embedder_ids_from_health(self):
        def handler(request):
            return httpx.Response(
                200,
                json={
                    "status": "ready",
                    "embedder_id": "t1+i1",
                    "dim": 8,
                    "text_embedder_id": "t1",
                    "image_embedder_id": "i1",
                },
            )

        sc = self.make(handler)
        assert sc.text_embedder_id == "t1"
        assert sc.image_embedder_id == "i1"
