"""Acceptance suite: every criterion printed as a pass/fail line.

Criterion 9 (real-dataset reproduction) is excluded from the default run
and provided as scripts/reproduce_uci.py; everything else executes here.
"""

import time

import numpy as np
import pytest

import dygwin.tensor as T
from dygwin.cli import main as cli_main
from dygwin.data import chronological_split, split_edge_indices
from dygwin.downstream import (TrainConfig, bce_loss, evaluate_flp, flp_score,
                               init_flp_decoder, sample_negatives, train_downstream)
from dygwin.encoder import encode, init_encoder, window_end_time
from dygwin.features import (WindowFeatureCache, common_neighbors_at, degree_at)
from dygwin.gradcheck import finite_difference_check
from dygwin.metrics import auc, average_precision, mrr, recall_at_k
from dygwin.pretrain import (DistortionConfig, PretrainConfig, distort, init_predictor,
                             predict, pretrain, ssl_loss, vicreg_covariance,
                             vicreg_invariance, vicreg_variance)
from dygwin.synthetic import make_synthetic_ctdg, write_synthetic_csv
from dygwin.windows import (Interval, evaluation_windows, generate_intervals,
                            make_window_batch)

from conftest import ctdg_from, edges_from
from test_metrics import (oracle_auc, oracle_average_precision, oracle_rank, records)
from test_temporal_features import brute_common_neighbors, brute_degree


def report(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\n[acceptance {number}] {status} - {detail}")
    assert passed, f"criterion {number}: {detail}"


@pytest.fixture(scope="module")
def synthetic_world():
    """The shared 5000-edge planted-rule dataset and its split."""
    ctdg = make_synthetic_ctdg(num_nodes=300, num_edges=5000, history=200,
                               motif_prob=0.8, seed=0)
    split = chronological_split(ctdg)
    return ctdg, split


def test_criterion_1_full_model_gradient_check():
    started = time.perf_counter()
    rng = np.random.default_rng(5)
    triples = []
    t = 0.0
    for _ in range(25):
        u, v = rng.choice(10, size=2, replace=False)
        t += float(rng.uniform(0.5, 2.0))
        triples.append((int(u), int(v), t))
    feats = rng.normal(size=(25, 2)).astype(np.float32)
    ctdg = ctdg_from(triples, num_nodes=10, feats=feats)
    batch = make_window_batch(ctdg, Interval(0, 18), target_size=7)

    encoder = init_encoder(num_layers=3, node_dim=8, time_dim=6, edge_dim=2,
                           heads=2, dropout=0.0, seed=1, dtype=np.float64)
    decoder = init_flp_decoder(node_dim=8, time_dim=6, seed=1, dtype=np.float64)
    predictor = init_predictor(8, seed=1, dtype=np.float64)
    negatives = sample_negatives(batch.target_edges, "train",
                                 np.random.default_rng(2), ctdg.num_nodes)
    view_a = distort(batch, DistortionConfig(0.3, 0.3), np.random.default_rng(3))
    view_b = distort(batch, DistortionConfig(0.3, 0.3), np.random.default_rng(4))
    common = np.intersect1d(view_a.endpoints(), view_b.endpoints())
    labels = np.concatenate([np.ones(len(batch.target_edges)),
                             np.zeros(len(batch.target_edges))]).reshape(-1, 1)

    # caches and sampled neighborhoods are parameter-independent: build once
    from dygwin.windows import build_layered_neighborhood
    cache = WindowFeatureCache(batch.input_edges)
    cache_a, cache_b = WindowFeatureCache(view_a), WindowFeatureCache(view_b)
    fallback = window_end_time(batch)
    seeds = np.unique(np.concatenate([batch.input_edges.endpoints(),
                                      batch.target_edges.endpoints(),
                                      negatives.ravel()]))
    hood = build_layered_neighborhood(batch.input_edges, seeds, 3, 5, (9, 11),
                                      index=cache.index)
    hood_a = build_layered_neighborhood(view_a, view_a.endpoints(), 3, 5, (10, 11),
                                        index=cache_a.index)
    hood_b = build_layered_neighborhood(view_b, view_b.endpoints(), 3, 5, (11, 11),
                                        index=cache_b.index)

    def forward():
        embeddings = encode(batch, encoder, 5, rng_key=(9,),
                            extra_nodes=negatives.ravel(), cache=cache, hood=hood)
        pos = flp_score(decoder, embeddings, batch.target_edges.u,
                        batch.target_edges.v, batch.target_edges.t, cache, fallback)
        neg = flp_score(decoder, embeddings, batch.target_edges.u, negatives.ravel(),
                        batch.target_edges.t, cache, fallback)
        supervised = bce_loss(T.concat_last_dim([T.transpose(pos), T.transpose(neg)]),
                              labels.reshape(1, -1))
        h_a = encode(batch, encoder, 5, rng_key=(10,), input_override=view_a,
                     cache=cache_a, hood=hood_a)
        h_b = encode(batch, encoder, 5, rng_key=(11,), input_override=view_b,
                     cache=cache_b, hood=hood_b)
        self_supervised = ssl_loss(predict(predictor, h_a.gather(common)),
                                   predict(predictor, h_b.gather(common)))
        return T.add(supervised, T.scale(self_supervised, 0.01))

    params = {**encoder.named(), **decoder.named(), **predictor.named()}
    check = finite_difference_check(forward, params, h=1e-6, max_coords_per_param=40,
                                    rng=np.random.default_rng(0))
    elapsed = time.perf_counter() - started
    report(1, check.max_rel_error < 1e-3 and elapsed < 60.0,
           f"full-model finite differences: max rel error {check.max_rel_error:.2e} "
           f"(worst {check.worst_parameter or 'none'}), {elapsed:.1f}s")


def test_criterion_2_metric_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        scores = np.round(rng.random(n), 2)
        labels = (rng.random(n) < 0.35).astype(int)
        recs = records(scores, labels)
        expected_ap = oracle_average_precision(scores, labels)
        got_ap = average_precision(recs) if labels.sum() else None
        if expected_ap is None:
            mismatches += got_ap is not None
        elif abs(got_ap - expected_ap) > 1e-12:
            mismatches += 1
        if auc(recs) != oracle_auc(scores.tolist(), labels.tolist()) \
                and labels.sum() not in (0, n):
            mismatches += 1
    groups, ranks = [], []
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        scores = np.round(rng.random(n), 1)
        labels = np.zeros(n, dtype=int)
        labels[rng.integers(0, n)] = 1
        groups.append(records(scores, labels))
        ranks.append(oracle_rank(scores.tolist(), labels.tolist()))
    if abs(mrr(groups) - np.mean([1.0 / r for r in ranks])) > 1e-12:
        mismatches += 1
    if recall_at_k(groups, 10) != np.mean([r <= 10 for r in ranks]):
        mismatches += 1
    elapsed = time.perf_counter() - started
    report(2, mismatches == 0 and elapsed < 10.0,
           f"AP/MRR/Recall@10/AUC vs brute force on 1000 instances: "
           f"{mismatches} mismatches, {elapsed:.1f}s")


def test_criterion_3_temporal_feature_oracles():
    started = time.perf_counter()
    rng = np.random.default_rng(77)
    mismatches = 0
    for _ in range(100):
        n_nodes = int(rng.integers(3, 10))
        n_edges = int(rng.integers(1, 50))
        triples = [(int(a), int(b), float(i))
                   for i, (a, b) in enumerate(rng.integers(0, n_nodes,
                                                           size=(n_edges, 2)))]
        edges = edges_from(triples)
        from dygwin.windows import IncidenceIndex
        index = IncidenceIndex(edges)
        for t in {tr[2] for tr in triples}:
            for u in range(n_nodes):
                if degree_at(edges, u, t, index) != brute_degree(triples, u, t):
                    mismatches += 1
                for v in range(u, n_nodes):
                    if common_neighbors_at(edges, u, v, t, index) != \
                            brute_common_neighbors(triples, u, v, t):
                        mismatches += 1
    elapsed = time.perf_counter() - started
    report(3, mismatches == 0 and elapsed < 10.0,
           f"degree/common-neighbor counts vs brute force on 100 graphs: "
           f"{mismatches} mismatches, {elapsed:.1f}s")


def test_criterion_4_window_invariants():
    rng = np.random.default_rng(13)
    failures = []
    for trial in range(20):
        horizon = int(rng.integers(2, 40))
        total = int(rng.integers(horizon, 400))
        window = int(rng.integers(1, 3 * horizon + 1))
        covered = np.zeros(total, dtype=int)
        for interval in generate_intervals(total, stride=horizon, window=window):
            covered[interval.end:min(interval.end + horizon, total)] += 1
        if not (np.all(covered[horizon:] == 1) and np.all(covered[:horizon] == 0)):
            failures.append(f"trial {trial}: training coverage broken")

        n_nodes = int(rng.integers(5, 15))
        triples = [(int(a), int(b), float(i)) for i, (a, b) in
                   enumerate(rng.integers(0, n_nodes, size=(total, 2)))]
        ctdg = ctdg_from(triples, num_nodes=n_nodes)
        region_start = total // 2
        seen = []
        for batch in evaluation_windows(ctdg, region_start, total, window, horizon):
            seen.extend(batch.target_edges.idx.tolist())
        if seen != list(range(region_start, total)):
            failures.append(f"trial {trial}: evaluation coverage broken")

        cut = max(1, region_start)
        batch = make_window_batch(ctdg, Interval(max(0, cut - window), cut), horizon)
        if len(batch.target_edges) == 0:
            continue
        params = init_encoder(num_layers=2, node_dim=6, time_dim=4, heads=2,
                              dropout=0.0, seed=trial, dtype=np.float64)
        baseline = encode(batch, params, 4, rng_key=(trial,))
        corrupted_targets = batch.target_edges.take(
            np.random.default_rng(trial).permutation(len(batch.target_edges)))
        corrupted_targets.t = corrupted_targets.t * 3.0 + 1e5
        corrupted = make_window_batch(ctdg, batch.interval, 0)
        corrupted.target_edges = corrupted_targets
        after = encode(corrupted, params, 4, rng_key=(trial,))
        if baseline.matrix.values.tobytes() != after.matrix.values.tobytes():
            failures.append(f"trial {trial}: encoder read target content")
    report(4, not failures,
           f"stride-equals-horizon coverage and causality on 20 random "
           f"configurations: {len(failures)} failures" +
           (f" ({failures[0]})" if failures else ""))


def test_criterion_5_vicreg_unit_values():
    collapsed = T.constant(np.tile([0.4, -1.3, 2.2], (5, 1)), dtype=np.float64)
    v = vicreg_variance(collapsed, gamma=1.0, eps=1e-4).item()
    c = vicreg_covariance(T.constant([[1.0, 1.0], [-1.0, -1.0]], dtype=np.float64)).item()
    s = vicreg_invariance(T.constant([[3.0, 4.0]], dtype=np.float64),
                          T.constant([[0.0, 0.0]], dtype=np.float64)).item()
    ok = abs(v - 0.99) < 1e-9 and abs(c - 1.0) < 1e-9 and abs(s - 25.0) < 1e-9
    report(5, ok, f"hand-derived term values: v={v!r}, c={c!r}, s={s!r}")


def test_criterion_6_synthetic_supervised_learning(synthetic_world):
    started = time.perf_counter()
    ctdg, split = synthetic_world
    encoder = init_encoder(num_layers=2, node_dim=100, time_dim=32, heads=2,
                           dropout=0.1, seed=2)
    config = TrainConfig(window=300, target_size=200, epochs=20, lr=1e-3,
                         max_neighbors=20, seed=2)
    result = train_downstream(ctdg, split, "flp", encoder, config=config)
    _, val_end = split.boundaries
    test_report = evaluate_flp(ctdg, (val_end, len(ctdg)), encoder, result.decoder,
                               config.window, 200, config.max_neighbors, seed=2)
    elapsed = time.perf_counter() - started
    initial_ap = result.history[0]["val_ap"]
    improvement = (result.best_val_ap or 0.0) - (initial_ap or 0.0)
    report(6, test_report["ap"] >= 0.75 and improvement >= 0.1 and elapsed < 900,
           f"supervised FLP on the planted-rule graph: test AP {test_report['ap']:.3f} "
           f"(chance 0.5, target 0.75), val AP gain {improvement:+.3f}, {elapsed:.0f}s")


@pytest.fixture(scope="module")
def probe_study(synthetic_world):
    """Frozen-encoder probes for SSL-init vs random-init over three seeds.

    Pre-training uses windows matched to the downstream scale; probes train
    to convergence with best-validation selection, and test AP is averaged
    over three negative draws for measurement precision.
    """
    from dygwin.data import split_edge_indices

    ctdg, split = synthetic_world
    train_idx, _, _ = split_edge_indices(ctdg, split)
    train_ctdg = ctdg.subset(train_idx)
    _, val_end = split.boundaries
    dim = 100
    started = time.perf_counter()

    def make_encoder(seed):
        return init_encoder(num_layers=2, node_dim=dim, time_dim=32, heads=2,
                            dropout=0.1, seed=seed)

    def probe(encoder_state, seed, label_fraction):
        encoder = make_encoder(seed)
        if encoder_state is not None:
            for name, p in encoder.named().items():
                p.values = encoder_state[name].copy()
        config = TrainConfig(window=300, target_size=200, epochs=30, lr=1e-3,
                             max_neighbors=20, seed=seed, val_every=3)
        result = train_downstream(ctdg, split, "flp", encoder, freeze_encoder=True,
                                  label_fraction=label_fraction, config=config)
        draws = [evaluate_flp(ctdg, (val_end, len(ctdg)), encoder, result.decoder,
                              300, 200, 20, seed=1000 + d)["ap"] for d in range(3)]
        return float(np.mean(draws))

    rows = {}
    for seed in (0, 1, 2):
        encoder = make_encoder(seed)
        predictor = init_predictor(dim, seed=seed)
        pretrain(train_ctdg, encoder, predictor,
                 PretrainConfig(window=300, stride=200, epochs=20, lr=1e-3,
                                max_neighbors=20, seed=seed))
        state = {name: p.values.copy() for name, p in encoder.named().items()}
        rows[seed] = {
            "ssl_full": probe(state, seed, 1.0),
            "ssl_low": probe(state, seed, 0.1),
            "rand_full": probe(None, seed, 1.0),
            "rand_low": probe(None, seed, 0.1),
        }
    return rows, time.perf_counter() - started


def test_criterion_7_ssl_beats_random_probe(probe_study):
    rows, elapsed = probe_study
    ssl_median = float(np.median([rows[s]["ssl_full"] for s in rows]))
    rand_median = float(np.median([rows[s]["rand_full"] for s in rows]))
    margin = ssl_median - rand_median
    report(7, margin >= 0.0 and elapsed < 2700,
           f"frozen-probe AP medians over 3 seeds: SSL-init {ssl_median:.4f} vs "
           f"random-init {rand_median:.4f} (margin {margin:+.4f}), study {elapsed:.0f}s")


def test_criterion_8_ssl_degrades_less_with_few_labels(probe_study):
    rows, _ = probe_study
    dods = [(rows[s]["rand_full"] - rows[s]["rand_low"])
            - (rows[s]["ssl_full"] - rows[s]["ssl_low"]) for s in rows]
    median_dod = float(np.median(dods))
    detail = ", ".join(f"seed {s}: {d:+.4f}" for s, d in zip(rows, dods))
    report(8, median_dod >= 0.0,
           f"label-fraction 0.1 vs 1.0 difference-of-differences per seed ({detail}); "
           f"3-seed median {median_dod:+.4f}")


def test_criterion_10_pipeline_determinism(tmp_path):
    csv_path = tmp_path / "toy.csv"
    write_synthetic_csv(csv_path, make_synthetic_ctdg(num_nodes=40, num_edges=400,
                                                      history=60, seed=11))
    reports = []
    for attempt in range(2):
        out = tmp_path / f"run{attempt}"
        args = ["--dataset", str(csv_path), "--output-dir", str(out), "--seed", "3",
                "--window-size", "120", "--set", "target_size=40",
                "--set", "node_dim=16", "--set", "time_dim=8",
                "--set", "num_layers=2", "--set", "num_neighbors=8"]
        assert cli_main(["train", *args, "--epochs", "2"]) == 0
        model = sorted(out.glob("train-*"))[0] / "model.dygw"
        assert cli_main(["eval", *args, "--checkpoint", str(model),
                         "--eval-horizon", "1,40"]) == 0
        reports.append((sorted(out.glob("eval-*"))[0] / "report.csv").read_bytes())
    report(10, reports[0] == reports[1],
           "two identically-seeded pipeline runs emit identical metric reports")


@pytest.mark.skip(reason="criterion 9 is the optional real-dataset reproduction; "
                         "run scripts/reproduce_uci.py (multi-hour CPU job)")
def test_criterion_9_uci_reproduction():
    pass
