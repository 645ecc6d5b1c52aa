import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hippomap.embed import (
    DimensionMismatchError,
    EmptyTextError,
    RemoteEmbedder,
    StubEmbedder,
    TransportError,
    cosine,
    embed_text,
    embed_texts,
    normalize,
)


def test_stub_is_deterministic(provider):
    a = embed_text("step A", provider)
    b = embed_text("step A", provider)
    assert a.tobytes() == b.tobytes()
    # a fresh instance gives the same bytes: pure function of text and d
    assert embed_text("step A", StubEmbedder(384)).tobytes() == a.tobytes()


def test_stub_unit_norm_and_dimension(provider):
    v = embed_text("compute the area of the triangle", provider)
    assert v.shape == (384,)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("text", ["", "   ", "\n\t"])
def test_empty_text_rejected(provider, text):
    with pytest.raises(EmptyTextError):
        embed_text(text, provider)


def test_stub_depends_on_dimension():
    a = embed_text("same text", StubEmbedder(16))
    b = embed_text("same text", StubEmbedder(32))
    assert a.shape == (16,) and b.shape == (32,)


def test_stub_similarity_tracks_token_overlap(provider):
    base = " ".join(f"w{i}" for i in range(12))
    near = base + " extra"
    far = " ".join(f"z{i}" for i in range(12))
    assert cosine(embed_text(base, provider), embed_text(near, provider)) > 0.85
    assert abs(cosine(embed_text(base, provider), embed_text(far, provider))) < 0.3


def test_cosine_examples():
    u = normalize(np.array([1.0, 2.0, 3.0]))
    assert cosine(u, u) == pytest.approx(1.0, abs=1e-12)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine(u, -u) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine(np.ones(3), np.ones(4))


vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=8, max_size=8).filter(
    lambda xs: np.linalg.norm(xs) > 1e-3
)


@given(vectors, vectors)
@settings(max_examples=200)
def test_cosine_properties(a, b):
    u, v = normalize(np.array(a)), normalize(np.array(b))
    assert abs(cosine(u, u) - 1.0) <= 1e-9
    assert cosine(u, v) == cosine(v, u)
    assert -1.0 <= cosine(u, v) <= 1.0


def _service(dim, status=200, calls=None):
    def handler(request: httpx.Request):
        if calls is not None:
            calls.append(request)
        if status != 200:
            return httpx.Response(status)
        texts = __import__("json").loads(request.content)["texts"]
        return httpx.Response(200, json={"embeddings": [[float(len(t))] + [1.0] * (dim - 1) for t in texts]})
    return httpx.MockTransport(handler)


def test_remote_roundtrip_and_batching():
    calls = []
    emb = RemoteEmbedder("http://embed.local", dimension=4, token="sekret", batch_size=2,
                         transport=_service(4, calls=calls))
    vs = embed_texts(["a", "bb", "ccc"], emb)
    assert len(vs) == 3 and len(calls) == 2
    assert calls[0].url.path == "/embed"
    assert calls[0].headers["authorization"] == "Bearer sekret"
    assert all(np.linalg.norm(v) == pytest.approx(1.0) for v in vs)


def test_remote_dimension_mismatch():
    emb = RemoteEmbedder("http://embed.local", dimension=384, transport=_service(512))
    with pytest.raises(DimensionMismatchError):
        embed_text("hello", emb)


def test_remote_transport_error_carries_status():
    calls = []
    emb = RemoteEmbedder("http://embed.local", dimension=4, max_retries=2, transport=_service(4, 503, calls))
    with pytest.raises(TransportError) as info:
        embed_text("hello", emb)
    assert info.value.status == 503 and info.value.retryable
    assert len(calls) == 3


def test_remote_client_error_not_retried():
    calls = []
    emb = RemoteEmbedder("http://embed.local", dimension=4, transport=_service(4, 401, calls))
    with pytest.raises(TransportError) as info:
        embed_text("hello", emb)
    assert info.value.status == 401 and not info.value.retryable
    assert len(calls) == 1


def test_remote_url_from_env(monkeypatch):
    monkeypatch.setenv("HIPPOMAP_EMBED_URL", "http://env.local/")
    emb = RemoteEmbedder(dimension=4, transport=_service(4))
    assert emb.base_url == "http://env.local"
    monkeypatch.delenv("HIPPOMAP_EMBED_URL")
    with pytest.raises(ValueError):
        RemoteEmbedder(dimension=4)
