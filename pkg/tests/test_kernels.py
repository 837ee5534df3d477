import numpy as np
import pytest

from qasir.errors import ConfigError
from qasir.kernels import HAS_NUMBA, active_backend, corpus_scores, pack_matrices
from qasir.scoring import score_pooled, score_zero_shot

from conftest import unit_vector


def _pack(rng, num=20, dim=12):
    ids = [f"v{i}" for i in range(num)]
    mats = [
        np.stack([unit_vector(rng, dim) for _ in range(int(rng.integers(1, 7)))])
        for _ in range(num)
    ]
    return pack_matrices(ids, mats), mats


@pytest.mark.parametrize("mode", ["attn", "mean", "max"])
def test_numpy_backend_matches_reference(rng, mode):
    packed, mats = _pack(rng)
    q = unit_vector(rng, 12)
    scores = corpus_scores(packed, q, mode=mode, backend="numpy")
    for i, mat in enumerate(mats):
        expect = (
            score_zero_shot(mat, q) if mode == "attn" else score_pooled(mat, q, mode)
        )
        assert abs(scores[i] - expect) < 1e-12


@pytest.mark.skipif(not HAS_NUMBA, reason="numba unavailable")
@pytest.mark.parametrize("mode", ["attn", "mean", "max"])
def test_backends_agree(rng, mode):
    packed, _ = _pack(rng, num=40)
    q = unit_vector(rng, 12)
    a = corpus_scores(packed, q, mode=mode, backend="numpy")
    b = corpus_scores(packed, q, mode=mode, backend="numba")
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("QASIR_BACKEND", "numpy")
    assert active_backend() == "numpy"
    monkeypatch.setenv("QASIR_BACKEND", "bogus")
    with pytest.raises(ConfigError):
        active_backend()
    monkeypatch.delenv("QASIR_BACKEND")
    assert active_backend() in ("numpy", "numba")


def test_temperature_sharpens(rng):
    packed, _ = _pack(rng, num=5)
    q = unit_vector(rng, 12)
    cold = corpus_scores(packed, q, mode="attn", temperature=0.05, backend="numpy")
    warm = corpus_scores(packed, q, mode="attn", temperature=1.0, backend="numpy")
    assert cold.shape == warm.shape
    assert not np.allclose(cold, warm)


def test_unknown_mode_rejected(rng):
    packed, _ = _pack(rng, num=2)
    with pytest.raises(ConfigError):
        corpus_scores(packed, unit_vector(rng, 12), mode="median")


def test_thread_fanout_is_order_stable(rng, monkeypatch):
    from qasir.scoring import rank_all
    from qasir.store import EmbeddingStore, QueryEmbedding, VideoEmbedding

    videos = [
        VideoEmbedding(f"v{i}", np.stack([unit_vector(rng, 12) for _ in range(3)]))
        for i in range(30)
    ]
    queries = [QueryEmbedding(f"q{i}", f"v{i}", unit_vector(rng, 12)) for i in range(30)]
    store = EmbeddingStore(videos, queries, dim=12)
    serial = rank_all(queries, store, "attn")
    monkeypatch.setenv("QASIR_THREADS", "4")
    threaded = rank_all(queries, store, "attn")
    assert serial == threaded
