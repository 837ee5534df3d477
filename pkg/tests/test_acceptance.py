"""Acceptance suite: every exit criterion, one [PASS]/[FAIL] line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
print. Reference figures for the cost-model checks are the published
per-grid frame averages and rounded pair-cost totals for the three PRVR
benchmarks (values rounded to 2 significant figures in the source tables).
"""

import json
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from qasir.cost_model import (
    get_profile,
    grid_cost_ratio,
    video_text_gflops,
    zero_shot_head,
)
from qasir.finetune import (
    LossConfig,
    TrainConfig,
    batch_forward_backward,
    batch_loss,
    init_params,
    train,
    FinetunedScorer,
)
from qasir.metrics import MomentAnnotation, mv_bucket, recall_at_k, report
from qasir.hybrid import HybridConfig, ModelHandle, hybrid_retrieve, screen
from qasir.kernels import corpus_scores, pack_matrices
from qasir.scoring import (
    PoolScorer,
    attend,
    attention_weights,
    rank_all,
    rank_corpus,
    score_zero_shot,
    softmax_weights,
)
from qasir.store import ingest
from qasir.super_image import resize_frame, tile_sequential, untile
from qasir.synth import SynthConfig, generate

from conftest import random_frame
from test_gradients import finite_difference_grads, relative_error

REPO = Path(__file__).resolve().parent.parent

# (backbone, grid) -> dataset -> (published avg super-image count, published total GFLOPs)
PUBLISHED_COSTS = {
    ("clip-b32", 1): {"activitynet": (60.3, 5.4e2), "tvr": (229.4, 2.0e3), "charades": (31.1, 2.8e2)},
    ("clip-b32", 2): {"activitynet": (15.5, 1.4e2), "tvr": (57.7, 5.1e2), "charades": (8.1, 7.7e1)},
    ("clip-b32", 3): {"activitynet": (7.1, 6.9e1), "tvr": (23.9, 2.3e2), "charades": (3.9, 4.0e1)},
    ("clip-b32", 4): {"activitynet": (4.2, 4.3e1), "tvr": (14.8, 1.3e2), "charades": (2.4, 2.7e1)},
    ("clip-b32", 5): {"activitynet": (2.9, 3.1e1), "tvr": (9.6, 9.0e1), "charades": (1.8, 2.1e1)},
    ("clip-b32", 6): {"activitynet": (2.1, 2.5e1), "tvr": (6.8, 6.6e1), "charades": (1.1, 1.5e1)},
    ("clip-l14", 1): {"activitynet": (60.3, 9.8e3), "tvr": (229.4, 3.7e4), "charades": (31.1, 5.0e3)},
    ("clip-l14", 2): {"activitynet": (15.5, 2.5e3), "tvr": (57.7, 9.2e3), "charades": (8.1, 1.3e3)},
    ("clip-l14", 3): {"activitynet": (7.1, 1.1e3), "tvr": (23.9, 4.1e3), "charades": (3.9, 6.4e2)},
    ("clip-l14", 4): {"activitynet": (4.2, 7.0e2), "tvr": (14.8, 2.3e3), "charades": (2.4, 4.0e2)},
    ("clip-l14", 5): {"activitynet": (2.9, 4.8e2), "tvr": (9.6, 1.5e3), "charades": (1.8, 3.0e2)},
    ("clip-l14", 6): {"activitynet": (2.1, 3.7e2), "tvr": (6.8, 1.1e3), "charades": (1.1, 1.9e2)},
    ("clip-l14-336", 1): {"activitynet": (60.3, 2.3e4), "tvr": (229.4, 8.7e4), "charades": (31.1, 1.1e4)},
    ("clip-l14-336", 2): {"activitynet": (15.5, 5.9e3), "tvr": (57.7, 2.1e4), "charades": (8.1, 3.1e3)},
    ("clip-l14-336", 3): {"activitynet": (7.1, 2.7e3), "tvr": (23.9, 9.8e3), "charades": (3.9, 1.4e3)},
    ("clip-l14-336", 4): {"activitynet": (4.2, 1.6e3), "tvr": (14.8, 5.6e3), "charades": (2.4, 9.3e2)},
    ("clip-l14-336", 5): {"activitynet": (2.9, 1.1e3), "tvr": (9.6, 3.6e3), "charades": (1.8, 7.0e2)},
    ("clip-l14-336", 6): {"activitynet": (2.1, 8.4e2), "tvr": (6.8, 2.6e3), "charades": (1.1, 4.4e2)},
}

# Cells where the published frame average and the published total contradict
# each other beyond 5% for any nonnegative constant query-side cost: sibling
# cells sharing backbone+dataset pin the constant to disjoint intervals.
KNOWN_INCONSISTENT_CELLS = {
    ("clip-b32", 3, "tvr"),
    ("clip-l14", 3, "activitynet"),
    ("clip-l14", 3, "tvr"),
    ("clip-l14-336", 3, "tvr"),
    ("clip-l14-336", 1, "charades"),
    ("clip-l14-336", 3, "charades"),
}


def _verdict(name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {name}" + (f": {detail}" if detail else ""))
    return ok


@pytest.fixture(scope="module", autouse=True)
def warm_kernels(rng_module=None):
    # jit compilation happens once here so per-criterion budgets measure math
    packed = pack_matrices(["w"], [np.eye(4)])
    for mode in ("attn", "mean", "max"):
        corpus_scores(packed, np.ones(4), mode=mode)
    yield


def _cell_errors():
    rows = []
    for (backbone, grid), by_dataset in PUBLISHED_COSTS.items():
        profile = get_profile(backbone)
        for dataset, (images, published) in by_dataset.items():
            cost = video_text_gflops(profile, images, zero_shot_head(images, profile.dim))
            rel = abs(cost.total - published) / published
            rows.append((backbone, grid, dataset, cost.total, published, rel))
    return rows


def test_cost_model_reproduction():
    """Every published (backbone x grid) cost cell within 5%, runtime < 1 s."""
    start = time.perf_counter()
    rows = _cell_errors()
    elapsed = time.perf_counter() - start
    bad = [r for r in rows if r[5] > 0.05]
    ok = not bad and elapsed < 1.0
    detail = (
        f"{len(rows) - len(bad)}/{len(rows)} cells within 5% in {elapsed * 1e3:.0f} ms"
    )
    if bad:
        detail += "".join(
            f"\n       {b}@{g}x{g}/{d}: computed {c:.1f} vs published {p:.0f} ({100 * r:.1f}%)"
            for b, g, d, c, p, r in bad
        )
    assert _verdict("cost-model reproduction (published table, 5%)", ok, detail), (
        "published frame-average and cost columns are mutually inconsistent in "
        f"{len(bad)} cells; see decisions ledger and "
        "test_cost_model_reproduction_envelope"
    )


def test_cost_model_reproduction_envelope():
    """Regression guard at the provably best achievable agreement."""
    rows = _cell_errors()
    bad = {(b, g, d) for b, g, d, _, _, rel in rows if rel > 0.05}
    worst = max(rel for *_, rel in rows)
    ok = bad == KNOWN_INCONSISTENT_CELLS and worst < 0.082
    _verdict(
        "cost-model envelope (48/54 within 5%, all within 8.2%)",
        ok,
        f"worst cell {100 * worst:.1f}%",
    )
    assert ok


def test_inverse_square_law():
    start = time.perf_counter()
    ok = True
    for frames in (40, 400, 4000):
        corpus = [frames] * 25
        for n in range(2, 7):
            ratio = grid_cost_ratio(n, corpus)
            lo, hi = 1.0 / n**2, 1.0 / n**2 + 1.0 / frames
            ok = ok and lo <= ratio <= hi
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 1.0
    assert _verdict(
        "1/N^2 backbone-cost law", ok, f"L in {{40,400,4000}}, N in 2..6, {elapsed * 1e3:.0f} ms"
    )


def test_tiling_roundtrip():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = 0
    ok = True
    for case in range(100):
        count = int(rng.integers(1, 41))
        frames = [random_frame(rng) for _ in range(count)]
        for n in range(1, 7):
            seq = tile_sequential(frames, n, 5)
            recovered = [cell for img in seq.images for cell in untile(img)]
            ok = ok and len(recovered) == count
            ok = ok and len(seq.images) == -(-count // (n * n))
            for original, cell in zip(frames, recovered):
                ok = ok and np.array_equal(resize_frame(original, 5), cell)
            checked += 1
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 10.0
    assert _verdict(
        "tiling roundtrip bit-exact", ok, f"{checked} tilings in {elapsed:.1f} s"
    )


def test_attention_invariants():
    start = time.perf_counter()
    rng = np.random.default_rng(515)
    ok = True
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        dim = int(rng.integers(2, 17))
        matrix = rng.standard_normal((k, dim))
        query = rng.standard_normal(dim)
        weights = attention_weights(matrix, query)
        ok = ok and abs(weights.sum() - 1.0) <= 1e-9
        scores = matrix @ query
        shift = float(rng.standard_normal() * 50)
        ok = ok and np.allclose(
            softmax_weights(scores), softmax_weights(scores + shift), atol=1e-9
        )
        perm = rng.permutation(k)
        base = attend(matrix, query)
        shuffled = attend(matrix[perm], query)
        ok = ok and np.allclose(shuffled.weights, base.weights[perm], atol=1e-9)
        ok = ok and abs(shuffled.score - base.score) <= 1e-9
        row = matrix[:1]
        plain = row[0] @ query / (np.linalg.norm(row[0]) * np.linalg.norm(query))
        ok = ok and abs(score_zero_shot(row, query) - plain) <= 1e-12
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5.0
    assert _verdict(
        "attention invariants (1000 instances)", ok, f"{elapsed:.2f} s"
    )


def test_gradient_correctness():
    start = time.perf_counter()
    dims = dict(dim=8, hidden=6, k=3, heads=2, batch=4)
    worst = 0.0
    worst_name = ""
    for mode in ("infonce", "literal"):
        rng = np.random.default_rng(999)
        params = init_params(
            rng, dims["dim"], hidden=dims["hidden"], heads=dims["heads"],
            ff_dim=4 * dims["dim"], zero_residual=False,
        )
        mats = [rng.standard_normal((dims["k"], dims["dim"])) for _ in range(dims["batch"])]
        mats = [m / np.linalg.norm(m, axis=1, keepdims=True) for m in mats]
        queries = rng.standard_normal((dims["batch"], dims["dim"]))
        queries /= np.linalg.norm(queries, axis=1, keepdims=True)
        config = LossConfig(mode=mode)
        _, analytic = batch_forward_backward(params, mats, queries, config)
        numeric = finite_difference_grads(
            params, lambda: batch_loss(params, mats, queries, config), step=1e-5
        )
        for name in analytic:
            err = float(relative_error(analytic[name], numeric[name]).max())
            if err > worst:
                worst, worst_name = err, f"{mode}:{name}"
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30.0
    assert _verdict(
        "gradient correctness vs finite differences",
        ok,
        f"max rel err {worst:.2e} ({worst_name}) in {elapsed:.1f} s",
    )


def test_planted_moment_ordering():
    start = time.perf_counter()
    store = generate(
        SynthConfig(seed=0, num_videos=200, k_min=8, k_max=8, dim=64,
                    noise_sigma=0.1, moment_fraction=1 / 8)
    )
    store.normalize()
    queries = [store.queries[qid] for qid in store.query_ids()]
    truth = {q.query_id: q.video_id for q in queries}
    r1 = {}
    for mode in ("attn", "mean", "max"):
        rankings = {
            qid: [vid for vid, _ in ranking]
            for qid, ranking in rank_all(queries, store, mode).items()
        }
        r1[mode] = recall_at_k(rankings, truth, 1)
    elapsed = time.perf_counter() - start
    ok = (
        r1["attn"] >= 95.0
        and r1["attn"] > r1["mean"]
        and r1["attn"] > r1["max"]
        and elapsed < 10.0
    )
    assert _verdict(
        "planted-moment pooling ordering",
        ok,
        f"R@1 attn={r1['attn']:.1f} mean={r1['mean']:.1f} max={r1['max']:.1f} "
        f"in {elapsed:.1f} s",
    )


def _sum_r(store, scorer):
    queries = [store.queries[qid] for qid in store.query_ids()]
    truth = {q.query_id: q.video_id for q in queries}
    rankings = {
        qid: [vid for vid, _ in ranking]
        for qid, ranking in rank_all(queries, store, scorer).items()
    }
    return sum(recall_at_k(rankings, truth, k) for k in (1, 5, 10, 100))


def test_training_improves_retrieval():
    start = time.perf_counter()
    geometry = dict(k_min=16, k_max=16, dim=32, noise_sigma=0.4, moment_fraction=1 / 16)
    train_store = generate(SynthConfig(seed=11, num_videos=512, **geometry))
    train_store.normalize()
    held_out = generate(SynthConfig(seed=99, num_videos=1000, **geometry))
    held_out.normalize()

    zero_shot = _sum_r(held_out, "attn")
    config = TrainConfig(
        learning_rate=1e-4, batch_size=64, epochs=25, seed=7, hidden=64,
        heads=4, ff_mult=2, loss=LossConfig(mode="infonce", temperature=0.07),
    )
    params, history = train(train_store, config)
    finetuned = _sum_r(held_out, FinetunedScorer(params))
    _, replay = train(train_store, config)
    elapsed = time.perf_counter() - start
    ok = (
        len(history) == 200
        and finetuned > zero_shot
        and history[-1] < history[0]
        and np.array_equal(history, replay)
        and elapsed < 120.0
    )
    assert _verdict(
        "training improves retrieval (held-out, sigma=0.4)",
        ok,
        f"sumR {zero_shot:.1f} -> {finetuned:.1f}, loss {history[0]:.3f} -> "
        f"{history[-1]:.4f}, 200 steps bit-reproducible, {elapsed:.0f} s",
    )


def test_hybrid_semantics():
    start = time.perf_counter()
    store = generate(
        SynthConfig(seed=31, num_videos=500, k_min=6, k_max=6, dim=32,
                    noise_sigma=0.35, moment_fraction=1 / 6)
    )
    store.normalize()
    high = ModelHandle("high", store, PoolScorer("mean"))
    low = ModelHandle("low", store, PoolScorer("attn"))
    ok = True

    # R = |corpus| reduces to the low model's ranking exactly
    full = HybridConfig(high=high, low=low, rerank_depth=len(store.videos))
    for qid in store.query_ids()[:25]:
        low_rank = [v for v, _ in rank_corpus(store.queries[qid], store, low.scorer)]
        ok = ok and [v for v, _ in hybrid_retrieve(qid, full)] == low_rank

    # positive inside the screened top R keeps its low-model rank among them
    depth = 50
    config = HybridConfig(high=high, low=low, rerank_depth=depth)
    truth = {qid: store.queries[qid].video_id for qid in store.query_ids()}
    hybrid_rankings = {}
    screen_rankings = {}
    inside = 0
    for qid in store.query_ids():
        query = store.queries[qid]
        screened = screen(query, store, high)
        screen_rankings[qid] = screened
        final = [v for v, _ in hybrid_retrieve(qid, config)]
        hybrid_rankings[qid] = final
        candidates = set(screened[:depth])
        if truth[qid] in candidates:
            inside += 1
            low_within = [
                v for v, _ in rank_corpus(query, store, low.scorer) if v in candidates
            ]
            ok = ok and final.index(truth[qid]) == low_within.index(truth[qid])

    screen_at_r = recall_at_k(screen_rankings, truth, depth)
    for k in (1, 5, 10, 50):
        ok = ok and recall_at_k(hybrid_rankings, truth, k) <= screen_at_r + 1e-9
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 10.0
    assert _verdict(
        "hybrid two-stage semantics",
        ok,
        f"500 queries, {inside} positives inside top-{depth}, {elapsed:.1f} s",
    )


def test_metric_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    vids = [f"v{i:04d}" for i in range(120)]
    rankings, truth = {}, {}
    for i in range(500):
        qid = f"q{i:04d}"
        order = rng.permutation(len(vids))
        rankings[qid] = [vids[j] for j in order]
        truth[qid] = vids[int(rng.integers(len(vids)))]

    ok = True
    for k in (1, 5, 10, 100):
        # independent oracle: literal position scan
        hits = 0
        for qid, positive in truth.items():
            pos = None
            for idx, vid in enumerate(rankings[qid], start=1):
                if vid == positive:
                    pos = idx
                    break
            if pos is not None and pos <= k:
                hits += 1
        ok = ok and recall_at_k(rankings, truth, k) == 100.0 * hits / 500

    ratios = {qid: float(r) for qid, r in zip(sorted(truth), rng.uniform(0.01, 1, 500))}
    annotations = [MomentAnnotation(qid, r) for qid, r in ratios.items()]
    rep = report(rankings, truth, annotations)
    ok = ok and rep.sum_r == pytest.approx(sum(rep.recall_at.values()))
    grouped_total = sum(rep.group_sizes.values())
    ok = ok and grouped_total == 500
    ok = ok and mv_bucket(0.2) == "short" and mv_bucket(0.4) == "middle"
    ok = ok and mv_bucket(1.0) == "long"
    elapsed = time.perf_counter() - start
    assert _verdict(
        "metric oracle agreement", ok, f"500 queries exact, boundaries bucketed, {elapsed:.1f} s"
    )


def test_exporter_contract(tmp_path):
    """Secondary component: PNGs + manifest -> QEMB parsed by primary ingest."""
    node = shutil.which("node")
    cli = REPO / "exporter" / "dist" / "cli.js"
    if node is None:
        pytest.skip("node runtime not available")
    if not cli.is_file():
        pytest.skip("exporter not built (npm run build in exporter/)")

    rng = np.random.default_rng(42)
    frames_dir = tmp_path / "imgs"
    frames_dir.mkdir()
    videos = []
    for vid, count in (("vidA", 3), ("vidB", 1)):
        names = []
        for k in range(count):
            name = f"{vid}_si{k}.png"
            arr = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
            Image.fromarray(arr, mode="RGB").save(frames_dir / name)
            names.append(f"imgs/{name}")
        videos.append({"video_id": vid, "duration_sec": 4.0, "frames": names})
    manifest = {
        "dataset": "contract",
        "videos": videos,
        "queries": [
            {"query_id": "q1", "text": "a person pours coffee", "video_id": "vidA"},
            {"query_id": "q2", "text": "dog catches a frisbee", "video_id": "vidB",
             "moment_span": [0.5, 2.0]},
        ],
    }
    manifest_path = tmp_path / "manifest.json"
    manifest_path.write_text(json.dumps(manifest))
    out_path = tmp_path / "export.qemb"

    proc = subprocess.run(
        [node, str(cli), "--manifest", str(manifest_path), "--backbone", "clip-b32",
         "--out", str(out_path)],
        capture_output=True, text=True, timeout=120,
    )
    ok = proc.returncode == 0
    detail = f"exporter exit={proc.returncode}"
    if ok:
        store = ingest(out_path, normalize=False)
        ok = ok and store.dim == 512
        ok = ok and store.video_ids() == ["vidA", "vidB"]
        ok = ok and store.videos["vidA"].num_images == 3
        ok = ok and store.videos["vidB"].num_images == 1
        ok = ok and store.query_ids() == ["q1", "q2"]
        ok = ok and store.queries["q2"].moment_span == (0.5, 2.0)
        detail += f", ingest ok, d={store.dim}, rows match manifest"
    else:
        detail += f", stderr: {proc.stderr[:300]}"
    assert _verdict("exporter contract (secondary)", ok, detail)
