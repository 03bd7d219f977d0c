"""Endpoint behavior: schemas, determinism, status codes, backpressure."""

import math

import pytest
from fastapi.testclient import TestClient

from embed_sidecar.app import Settings, create_app
from conftest import StubOcr, b64, png_bytes, text_png


def assert_embed_response(body, n_inputs, dim):
    assert set(body) == {"embedder_id", "dim", "matrices"}
    assert isinstance(body["embedder_id"], str) and body["embedder_id"]
    assert body["dim"] == dim
    assert len(body["matrices"]) == n_inputs
    for matrix in body["matrices"]:
        assert len(matrix) >= 1
        for row in matrix:
            assert len(row) == dim
            assert all(isinstance(v, float) and math.isfinite(v) for v in row)


class TestHealth:
    def test_ready(self, client):
        resp = client.get("/v1/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["dim"] == 16
        assert body["embedder_id"]
        assert body["text_embedder_id"] != body["image_embedder_id"]

    def test_loading_503(self):
        app = create_app(Settings(enable_ocr=False), ready=False)
        client = TestClient(app)
        assert client.get("/v1/health").status_code == 503
        assert client.post("/v1/embed/text", json={"texts": ["x"]}).status_code == 503

    def test_dim_change_changes_embedder_id(self):
        ids = set()
        for dim in (16, 32):
            app = create_app(Settings(dim=dim, enable_ocr=False))
            ids.add(TestClient(app).get("/v1/health").json()["embedder_id"])
        assert len(ids) == 2


class TestEmbedText:
    def test_batch_of_three(self, client):
        resp = client.post("/v1/embed/text", json={"texts": ["a", "b c", "d e f"]})
        assert resp.status_code == 200
        assert_embed_response(resp.json(), 3, 16)

    def test_deterministic(self, client):
        payload = {"texts": ["the revenue table", "page two"]}
        first = client.post("/v1/embed/text", json=payload).json()
        second = client.post("/v1/embed/text", json=payload).json()
        assert first == second  # bitwise-equal matrices

    def test_image_space_differs(self, client):
        text_resp = client.post("/v1/embed/text", json={"texts": ["q"]}).json()
        image_resp = client.post(
            "/v1/embed/text", json={"texts": ["q"], "space": "image"}
        ).json()
        assert text_resp["embedder_id"] != image_resp["embedder_id"]
        assert text_resp["matrices"] != image_resp["matrices"]

    def test_empty_batch_422(self, client):
        assert client.post("/v1/embed/text", json={"texts": []}).status_code == 422

    def test_unknown_space_422(self, client):
        resp = client.post("/v1/embed/text", json={"texts": ["x"], "space": "audio"})
        assert resp.status_code == 422


class TestEmbedImage:
    def test_one_pixel_png(self, client):
        resp = client.post(
            "/v1/embed/image", json={"images": [b64(png_bytes(1, 1))]}
        )
        assert resp.status_code == 200
        assert_embed_response(resp.json(), 1, 16)

    def test_deterministic(self, client):
        payload = {"images": [b64(png_bytes())]}
        first = client.post("/v1/embed/image", json=payload).json()
        second = client.post("/v1/embed/image", json=payload).json()
        assert first == second

    def test_distinct_images_distinct_matrices(self, client):
        resp = client.post(
            "/v1/embed/image",
            json={"images": [b64(png_bytes(color="white")), b64(png_bytes(color="black"))]},
        ).json()
        assert resp["matrices"][0] != resp["matrices"][1]

    def test_undecodable_bytes_422(self, client):
        resp = client.post("/v1/embed/image", json={"images": [b64(b"not a png")]})
        assert resp.status_code == 422

    def test_truncated_base64_422(self, client):
        resp = client.post("/v1/embed/image", json={"images": ["AAA!???"]})
        assert resp.status_code == 422


class TestOcrEndpoint:
    def test_transcript(self, client):
        resp = client.post("/v1/ocr", json={"image": b64(png_bytes())})
        assert resp.status_code == 200
        assert resp.json() == {"text": "stub transcript"}

    def test_truncated_base64_422(self, client):
        assert client.post("/v1/ocr", json={"image": "!!!"}).status_code == 422

    def test_undecodable_image_422(self, client):
        assert (
            client.post("/v1/ocr", json={"image": b64(b"junk")}).status_code == 422
        )

    def test_disabled_503(self):
        app = create_app(Settings(enable_ocr=False))
        assert (
            TestClient(app).post("/v1/ocr", json={"image": b64(png_bytes())}).status_code
            == 503
        )


class TestLimits:
    def test_payload_cap_413(self):
        app = create_app(Settings(max_payload_bytes=100), ocr=StubOcr())
        client = TestClient(app)
        resp = client.post("/v1/embed/text", json={"texts": ["x" * 1000]})
        assert resp.status_code == 413

    def test_queue_overflow_429(self):
        app = create_app(Settings(queue_depth=0), ocr=StubOcr())
        client = TestClient(app)
        resp = client.post("/v1/embed/text", json={"texts": ["x"]})
        assert resp.status_code == 429


@pytest.fixture(scope="module")
def ocr_client():
    pytest.importorskip("rapidocr_onnxruntime")
    return TestClient(create_app(Settings(dim=16)))


class TestRapidOcrBackend:
    def test_rendered_text_recovered(self, ocr_client):
        resp = ocr_client.post("/v1/ocr", json={"image": b64(text_png("Total: 42"))})
        assert resp.status_code == 200
        assert "42" in resp.json()["text"]

    def test_blank_image_empty_string(self, ocr_client):
        resp = ocr_client.post("/v1/ocr", json={"image": b64(png_bytes(200, 100))})
        assert resp.status_code == 200
        assert resp.json()["text"] == ""


class TestCoreClientContract:
    """The consuming package's sidecar client speaks this wire format."""

    def test_round_trip_with_core_client(self):
        docqa_gateway = pytest.importorskip("docqa.gateway")
        app = create_app(Settings(dim=16), ocr=StubOcr())
        http = TestClient(app)
        side = docqa_gateway.SidecarClient("http://testserver/v1", client=http)
        assert side.text_embedder_id.endswith(":text")
        assert side.image_embedder_id.endswith(":image")
        _, mats = side.embed_texts(["hello", "world"])
        assert len(mats) == 2 and mats[0].shape[1] == 16
        _, qmats = side.embed_image_queries(["hello"])
        assert qmats[0].shape[1] == 16
        _, imats = side.embed_images([png_bytes()])
        assert imats[0].shape[1] == 16
        assert side.recognize(png_bytes()) == "stub transcript"
