"""Acceptance criteria AC-1 .. AC-10.

Each test records one ``AC-n PASS|FAIL: ...`` line; ``conftest.py`` prints
them in a summary section at the end of the run.
"""

import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lecseg.baselines import naive_equal_splits
from lecseg.datamodel import (
    ClipFeatureRecord,
    Lecture,
    Segmentation,
    SynthConfig,
    decode_features,
    encode_features,
    generate_synthetic,
)
from lecseg.embedder import JointEmbedder, init_params, sample_batch, train, TrainConfig
from lecseg.embedder.io import decode_params, encode_params
from lecseg.embedder.model import embed_clips, embed_texts
from lecseg.metrics import boundary_score, contingency, evaluate, frame_labels, matched_overlap_metrics, nmi
from lecseg.twfinch import TwfinchConfig, auto_k, segment_exact_k

from gradcheck import gradient_errors
from instances import interleaved_instance
from oracles import brute_force_overlap_metrics, restricted_growth_strings

# The synthetic corpora below use 64 dimensions per modality. The noise is
# per coordinate, so at the 2048/768 defaults its norm is several times the
# unit topic norm; 64 keeps sigma = 0.1 a moderate perturbation.
AC_DIMS = (64, 64, 64, 64)


@pytest.fixture
def verdict(record_property):
    def record(ac, ok, detail):
        record_property("acceptance", f"{ac} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return record


@pytest.fixture(scope="module")
def ac2_corpus():
    t0 = time.perf_counter()
    lectures = generate_synthetic(SynthConfig(n_lectures=50, k_range=(3, 10), noise_sigma=0.1, dims=AC_DIMS))
    return lectures, time.perf_counter() - t0


def frame_nmi(seg, lec):
    T = lec.total_duration_s
    return nmi(frame_labels(seg.labels, lec.starts, lec.ends, T), frame_labels(lec.gt.labels, lec.starts, lec.ends, T))


def test_ac1_metric_oracle_equivalence(verdict):
    """Every canonical pair of length <= 8 with <= 3 labels.

    Lengths up to 6 are checked pair by pair. For lengths 7 and 8 the pairs
    are grouped by their contingency table (which, with ``n``, determines
    every input the metric reads) and one pair per table is checked.
    """
    t0 = time.perf_counter()
    checked, mismatches = 0, 0
    for n in range(1, 9):
        rgs = np.array(restricted_growth_strings(n, 3))
        if n <= 6:
            pairs = [(p, g) for p in rgs for g in rgs]
        else:
            # table code: counts of each (pred, gt) label combination, plus sizes
            codes = {}
            for p in rgs:
                keys = p[None, :] * 3 + rgs
                tables = np.stack([(keys == v).sum(axis=1) for v in range(9)], axis=1)
                for row, g in zip(map(tuple, tables), rgs):
                    codes.setdefault(row, (p, g))
            pairs = list(codes.values())
        for p, g in pairs:
            p, g = p.tolist(), g.tolist()
            want = tuple(brute_force_overlap_metrics(p, g)[:3])
            mismatches += matched_overlap_metrics(p, g) != want
            checked += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    verdict("AC-1", ok, f"{checked} pairs/tables checked, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 60


def test_ac1_table_grouping_is_sound():
    # pairs sharing a contingency table must agree on the metric (spot check at n = 7)
    rgs = restricted_growth_strings(7, 3)
    rng = np.random.default_rng(0)
    groups = {}
    for _ in range(3000):
        p, g = rgs[rng.integers(len(rgs))], rgs[rng.integers(len(rgs))]
        key = contingency(np.array(p), np.array(g)).tobytes() + bytes(len(set(p)))
        groups.setdefault(key, set()).add(matched_overlap_metrics(p, g))
    assert all(len(v) == 1 for v in groups.values())


def test_ac2_twfinch_synthetic_recovery(ac2_corpus, verdict):
    lectures, gen_time = ac2_corpus
    t0 = time.perf_counter()
    scores, contiguous = [], []
    for lec in lectures:
        seg, _ = segment_exact_k(lec.raw_features(), lec.midpoints, lec.total_duration_s, lec.gt.k)
        scores.append(frame_nmi(seg, lec))
        contiguous.append(seg.contiguous)
    elapsed = gen_time + time.perf_counter() - t0
    mean = float(np.mean(scores))
    ok = mean >= 0.95 and all(contiguous) and elapsed < 10
    verdict("AC-2", ok, f"mean NMI {mean:.4f} (min {min(scores):.3f}), all contiguous {all(contiguous)}, {elapsed:.1f}s")
    assert mean >= 0.95
    assert all(contiguous)
    assert elapsed < 10


def test_ac3_gradient_correctness(verdict):
    worst, checked, skipped = 0.0, 0, 0
    for seed in range(10):
        errors, n_checked, n_skipped, _ = gradient_errors(seed)
        worst = max(worst, float(errors.max()))
        checked += n_checked
        skipped += n_skipped
    ok = worst <= 1e-4 and checked > 0
    verdict("AC-3", ok, f"max relative error {worst:.2e} over {checked} coordinates ({skipped} near a kink skipped)")
    assert checked > 0
    assert worst <= 1e-4


def median_true_rank(params, lectures, n_batches=20, batch_size=32, seed=123):
    """Median rank (1 = best) of each clip's own transcript among its batch's transcripts."""
    rng = np.random.default_rng(seed)
    sizes = [lec.n_clips for lec in lectures]
    ranks = []
    for _ in range(n_batches):
        pairs = sample_batch(rng, sizes, batch_size, 0.5)
        recs = [lectures[l].clips[c] for l, c in pairs]
        f = embed_clips(params, *(np.stack([getattr(r, m) for r in recs]) for m in ("v2d", "v3d", "ocr")))
        g = embed_texts(params, np.stack([r.text for r in recs]))
        f = f / np.linalg.norm(f, axis=1, keepdims=True)
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        S = f @ g.T
        ranks.extend(1 + (S > np.diag(S)[:, None]).sum(axis=1))
    return float(np.median(ranks))


def test_ac4_training_sanity(verdict):
    t0 = time.perf_counter()
    lectures = generate_synthetic(SynthConfig(n_lectures=20, noise_sigma=0.2, dims=AC_DIMS))
    params0 = init_params(*AC_DIMS, embed_dim=256, ocr_proj_dim=128, seed=0)
    result = train(params0, lectures, TrainConfig(epochs=5))
    before = median_true_rank(params0, lectures)
    after = median_true_rank(result.params, lectures)
    elapsed = time.perf_counter() - t0
    trace = result.loss_trace
    ratio = trace[-1] / trace[0]
    ok = ratio <= 0.5 and after < before and elapsed < 300
    verdict("AC-4", ok, f"loss epoch5/epoch1 = {ratio:.3f}, median rank {before:g} -> {after:g}, {elapsed:.1f}s")
    assert ratio <= 0.5
    assert after < before
    assert elapsed < 300


def test_ac5_learned_embedding_benefit(verdict):
    info = {"v2d": "even", "v3d": "even", "ocr": "even", "text": "odd"}
    margins = []
    for seed in range(5):
        cfg = SynthConfig(n_lectures=20, noise_sigma=0.1, dims=AC_DIMS, modality_informativeness=info,
                          rng_seed=seed, cross_modal_map_seed=seed)
        lectures = generate_synthetic(cfg)
        model = JointEmbedder(embed_dim=256, ocr_proj_dim=128, epochs=5, random_state=seed).fit(lectures)

        def mean_nmi(features):
            out = []
            for lec in lectures:
                seg, _ = segment_exact_k(features(lec), lec.midpoints, lec.total_duration_s, lec.gt.k)
                out.append(frame_nmi(seg, lec))
            return float(np.mean(out))

        learned = mean_nmi(model.transform)
        best_raw = max(mean_nmi(lambda lec, m=m: lec.matrix(m)) for m in ("v2d", "v3d", "ocr", "text"))
        margins.append(learned - best_raw)
    ok = min(margins) >= 0.05
    verdict("AC-5", ok, f"learned minus best raw modality NMI per seed: {', '.join(f'{m:+.3f}' for m in margins)}")
    assert min(margins) >= 0.05


def test_ac6_alpha_escalation(verdict):
    phi, tau, T = interleaved_instance()
    at_one, _ = segment_exact_k(phi, tau, T, 2, TwfinchConfig(require_contiguous=False))
    escalated, alpha = segment_exact_k(phi, tau, T, 2)
    ok = (not at_one.contiguous) and escalated.contiguous and alpha <= 5.0
    verdict("AC-6", ok, f"alpha=1 contiguous {at_one.contiguous}; escalated contiguous {escalated.contiguous} at alpha {alpha}")
    assert not at_one.contiguous
    assert escalated.contiguous and alpha <= 5.0


@settings(max_examples=100, deadline=None)
@given(
    st.integers(3, 12),
    st.floats(0.5, 0.99),
    st.floats(-0.5, 0.8),
    st.floats(0.0, 0.3),
    st.integers(0, 2**16),
    st.integers(1, 4),
)
def test_ac6_escalation_terminates(seg_len, cos_aa, cos_ab, noise, seed, K):
    phi, tau, T = interleaved_instance(seg_len, cos_aa, cos_ab, noise, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        seg, alpha = segment_exact_k(phi, tau, T, K)
    assert seg.k == K
    assert 1.0 <= alpha <= 5.0


def equal_segment_lecture(K=5, clips_per_segment=12, clip_len=10.0):
    n = K * clips_per_segment
    vec = [np.ones(2, np.float32)] * 4
    clips = [ClipFeatureRecord("eq", i, i * clip_len, (i + 1) * clip_len, *vec) for i in range(n)]
    gt = Segmentation(np.repeat(np.arange(K), clips_per_segment))
    return Lecture("eq", n * clip_len, clips, gt=gt)


def test_ac7_naive_baseline_exact(verdict):
    lec = equal_segment_lecture()
    seg = naive_equal_splits(lec.n_clips, np.column_stack([lec.starts, lec.ends]), lec.gt.k, lec.total_duration_s)
    r = evaluate(seg, lec.gt, lec, k_list=(30,))
    ok = (r.mof, r.iou, r.f1, r.bs_at[30]) == (1.0, 1.0, 1.0, 100.0)
    verdict("AC-7", ok, f"MoF {r.mof}, IoU {r.iou}, F1 {r.f1}, BS@30 {r.bs_at[30]}")
    assert ok


def test_ac8_boundary_score_monotone(verdict):
    rng = np.random.default_rng(8)
    violations = 0
    for _ in range(200):
        T = rng.uniform(300, 3000)
        pred = np.sort(rng.uniform(0, T, rng.integers(0, 12)))
        gt = np.sort(rng.uniform(0, T, rng.integers(0, 12)))
        scores = [boundary_score(pred, gt, k) for k in (5, 10, 15, 20, 25, 30)]
        violations += any(b < a for a, b in zip(scores, scores[1:]))
    verdict("AC-8", violations == 0, f"{violations} non-monotone cases out of 200")
    assert violations == 0


def random_lecture(rng, idx):
    dims = tuple(int(d) for d in rng.integers(1, 20, 4))
    n = int(rng.integers(1, 30))
    clips = [
        ClipFeatureRecord(f"lec-{idx}", i, float(i), i + 0.5 + float(rng.uniform(0, 0.5)),
                          *(rng.standard_normal(d).astype(np.float32) for d in dims))
        for i in range(n)
    ]
    return Lecture(f"lec-{idx}", float(n) + float(rng.uniform(0, 5)), clips)


def test_ac9_format_roundtrips(verdict):
    rng = np.random.default_rng(9)
    failures = 0
    for i in range(50):
        first = encode_features(random_lecture(rng, i))
        failures += encode_features(decode_features(first)) != first
        d2d, d3d, d_ocr, d_text = (int(x) for x in rng.integers(1, 12, 4))
        params = init_params(d2d, d3d, d_ocr, d_text, embed_dim=int(rng.integers(1, 10)),
                             ocr_proj_dim=int(rng.integers(1, 10)), seed=i)
        for name in ("b_ocr", "b1c", "b2c", "b_txt", "b1t", "b2t"):
            getattr(params, name)[:] = rng.standard_normal(getattr(params, name).shape)
        first = encode_params(params)
        failures += encode_params(decode_params(first)) != first
    verdict("AC-9", failures == 0, f"{failures} byte mismatches over 50 AVLF + 50 AVLE instances")
    assert failures == 0


def test_ac10_auto_k_sanity(ac2_corpus, verdict):
    lectures, _ = ac2_corpus
    k_err = {"second_last": [], "third_last": []}
    scores = {"gt": [], "second_last": [], "third_last": []}
    for lec in lectures:
        X, tau, T = lec.raw_features(), lec.midpoints, lec.total_duration_s
        seg, _ = segment_exact_k(X, tau, T, lec.gt.k)
        scores["gt"].append(frame_nmi(seg, lec))
        for which in k_err:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                seg, _, _ = auto_k(X, tau, T, which=which)
            k_err[which].append(abs(seg.k - lec.gt.k))
            scores[which].append(frame_nmi(seg, lec))
    err = {w: float(np.mean(v)) for w, v in k_err.items()}
    mean = {w: float(np.mean(v)) for w, v in scores.items()}
    order_ok = err["third_last"] <= err["second_last"]
    nmi_ok = mean["gt"] >= max(mean["second_last"], mean["third_last"])
    verdict(
        "AC-10",
        order_ok and nmi_ok,
        f"mean |dK| third-last {err['third_last']:.2f} vs second-last {err['second_last']:.2f}; "
        f"NMI gt {mean['gt']:.3f}, second-last {mean['second_last']:.3f}, third-last {mean['third_last']:.3f}",
    )
    assert order_ok
    assert nmi_ok
