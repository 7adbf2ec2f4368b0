"""Acceptance criteria; each test prints one PASS/FAIL line in the run summary."""

import time

import numpy as np
import pytest

from avrdiar.cli import main
from avrdiar.cluster import ahc_cluster, build_similarity_matrix
from avrdiar.core import LINKAGES, RttmRecord, TimeInterval, parse_rttm, serialize_rttm
from avrdiar.fusion import exact_face_scorer
from avrdiar.pipeline import evaluate_corpus, missing_rate_sweep
from avrdiar.scoring import aggregate, brute_force_der, compute_der
from gen import random_diarization
from gradcheck import REL_TOL, check_draw
from oracles import ahc_exhaustive, spearman
from test_cluster import random_similarity
from test_scoring import diar

FIELDS = ("ms_pct", "fa_pct", "spke_pct", "der_pct")


def corpus_der(run, corpus, missing_rate=0.0, **kwargs):
    per_file, _ = evaluate_corpus(corpus, run.scorer.model, run.scorer.threshold, run.cfg,
                                  missing_rate, run.cfg.seed, **kwargs)
    return aggregate(per_file.values()).der_pct


@pytest.mark.criterion(1, "event-based DER matches the discretized oracle")
def test_der_oracle_equivalence(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    n_cases = 60
    for _ in range(n_cases):
        ref = random_diarization(rng, max_speakers=6, max_time=120.0, grid=0.001)
        hyp = random_diarization(rng, max_speakers=6, max_time=120.0, prefix="h", grid=0.001)
        fast, slow = compute_der(ref, hyp, 0.25), brute_force_der(ref, hyp, 0.25)
        for field in FIELDS:
            worst = max(worst, abs(getattr(fast, field) - getattr(slow, field)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{n_cases} cases, max diff {worst:.4f} pp, {elapsed:.1f} s")
    assert worst <= 0.1
    assert elapsed < 30


@pytest.mark.criterion(2, "hand-derived DER cases")
def test_hand_derived_der(record_property):
    spke = compute_der(diar(("A", 0, 2), ("B", 2, 4)), diar(("X", 0, 4)), 0.25)
    fa = compute_der(diar(("A", 0, 2)), diar(("A", 0, 3)), 0.25)
    record_property("detail", f"SPKE case {spke.der_pct:.2f}%, FA case {fa.der_pct:.2f}%")
    assert spke.spke_pct == pytest.approx(50.0, abs=0.1)
    assert spke.der_pct == pytest.approx(50.0, abs=0.1)
    assert fa.fa_pct == pytest.approx(50.0, abs=0.1)
    assert fa.der_pct == pytest.approx(50.0, abs=0.1)


@pytest.mark.criterion(3, "analytic gradients match central differences")
def test_gradient_correctness(record_property):
    results = [check_draw(1000 + k) for k in range(20)]
    worst = max(r.worst for r in results)
    checked = sum(r.checked for r in results)
    skipped = sum(r.skipped for r in results)
    record_property("detail", f"20 draws, {checked} coords, {skipped} at ReLU kinks skipped, "
                              f"worst rel err {worst:.2e}")
    assert all(not r.failures for r in results)
    assert worst <= REL_TOL
    assert skipped <= 0.05 * (checked + skipped)


@pytest.mark.criterion(4, "AHC matches exhaustive merge simulation")
def test_ahc_oracle_equivalence(record_property):
    rng = np.random.default_rng(77)
    total = 0
    for linkage in LINKAGES:
        for trial in range(200):
            n = int(rng.integers(1, 9))
            S = random_similarity(rng, n, quantized=trial % 4 == 0)
            thr = float(rng.random())
            assert ahc_cluster(S, thr, linkage) == ahc_exhaustive(S.tolist(), thr, linkage), \
                (linkage, S, thr)
            total += 1
    record_property("detail", f"{total} matrices across {len(LINKAGES)} linkages")


@pytest.mark.slow
@pytest.mark.criterion(5, "end-to-end synthetic recovery")
def test_end_to_end_recovery(run_p05, acceptance_split, record_property):
    start = time.perf_counter()
    der = corpus_der(run_p05, acceptance_split.test)
    total = run_p05.seconds + time.perf_counter() - start
    record_property("detail", f"test DER {der:.2f}%, train+eval {total:.0f} s")
    assert der <= 5.0
    assert total < 300


@pytest.mark.slow
@pytest.mark.criterion(6, "separation margin between same and different speakers")
def test_separation_margin(run_p05, acceptance_split, record_property):
    same, diff = [], []
    for video in acceptance_split.test.videos:
        pairs = video.pairs
        S = build_similarity_matrix(pairs, run_p05.scorer.model)
        for i in range(len(pairs)):
            for j in range(i + 1, len(pairs)):
                (same if pairs[i].true_speaker == pairs[j].true_speaker else diff).append(S[i, j])
    margin = float(np.mean(same) - np.mean(diff))
    record_property("detail", f"mean same {np.mean(same):.3f}, mean different "
                              f"{np.mean(diff):.3f}, margin {margin:.3f}")
    assert margin >= 0.3


@pytest.mark.slow
@pytest.mark.criterion(7, "DER does not improve as faces go missing")
def test_missing_rate_degradation(run_p05, acceptance_split, record_property):
    sweep = missing_rate_sweep(acceptance_split.test, run_p05.scorer.model,
                               run_p05.scorer.threshold, run_p05.cfg, seed=run_p05.cfg.seed)
    rates = [r[0] for r in sweep.rows]
    ders = [r[4] for r in sweep.rows]
    rho = spearman(rates, ders)
    record_property("detail", f"DER(0)={ders[0]:.2f}%, DER(1)={ders[-1]:.2f}%, "
                              f"spearman {rho:.3f}")
    assert len(rates) == 11
    assert ders[-1] >= ders[0]
    assert rho >= 0


@pytest.mark.slow
@pytest.mark.criterion(8, "always-drop-faces training is worse than p=0.5")
def test_missing_probability_ablation(run_p05, run_p10, acceptance_split, record_property):
    der05 = corpus_der(run_p05, acceptance_split.test)
    der10 = corpus_der(run_p10, acceptance_split.test)
    record_property("detail", f"p=0.5 DER {der05:.2f}%, p=1.0 DER {der10:.2f}%")
    assert der10 > der05


def random_record_set(rng):
    out = []
    for _ in range(int(rng.integers(0, 30))):
        onset = int(rng.integers(0, 3_600_000)) / 1000
        dur = int(rng.integers(1, 60_000)) / 1000
        out.append(RttmRecord(f"rec{rng.integers(5)}", int(rng.integers(1, 3)),
                              TimeInterval(onset, round(onset + dur, 3)), f"spk_{rng.integers(20)}"))
    return out


@pytest.mark.slow
@pytest.mark.criterion(9, "RTTM round trip and byte-identical seeded runs")
def test_round_trip_and_determinism(tmp_path, record_property):
    rng = np.random.default_rng(9)
    for _ in range(100):
        records = random_record_set(rng)
        assert parse_rttm(serialize_rttm(records)) == records

    def run(tag):
        root = tmp_path / tag
        assert main(["generate", "--out", str(root / "corpus"), "--videos", "12",
                     "--val-videos", "2", "--test-videos", "2", "--seed", "21"]) == 0
        assert main(["train", "--corpus", str(root / "corpus"), "--out", str(root / "model"),
                     "--iterations", "200", "--seed", "21"]) == 0
        assert main(["diarize", "--checkpoint", str(root / "model" / "model.ckpt"),
                     "--corpus", str(root / "corpus"), "--missing-rate", "0.3",
                     "--out", str(root / "hyp"), "--seed", "21"]) == 0
        return {p.relative_to(root).as_posix(): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file()}

    first, second = run("a"), run("b")
    record_property("detail", f"100 record sets round-tripped; {len(first)} output files identical")
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name


@pytest.mark.slow
@pytest.mark.criterion(10, "late fusion with a perfect face scorer does no harm")
def test_late_fusion_no_harm(run_sigma0, sigma0_split, record_property):
    unfused = corpus_der(run_sigma0, sigma0_split.test)
    fused = corpus_der(run_sigma0, sigma0_split.test, face_scorer=exact_face_scorer, alpha=0.0)
    record_property("detail", f"unfused {unfused:.2f}%, fused {fused:.2f}%")
    assert fused <= unfused
