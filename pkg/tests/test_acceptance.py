"""Acceptance criteria, one test each.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion.
"""

import hashlib
import json
import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import build_map, unit
from hippomap.cogmap import CognitiveMap, load_map, save_map
from hippomap.dynamics import TokenDistribution, perturb, token_entropy
from hippomap.embed import StubEmbedder, embed_text, normalize
from hippomap.engine import (
    Candidate,
    ScriptedBackend,
    SolveConfig,
    answers_equivalent,
    batch_eval,
    evaluate_answer,
    extract_number,
    majority_vote,
    run_learning_loop,
    solve,
)
from hippomap.navigator import (
    ActionKind,
    TrainingSet,
    accuracy,
    build_features,
    decide,
    edge_label,
    extract_training_set,
    load_model,
    save_model,
    score,
    train,
)
from hippomap.simtraj import SimConfig, SimTask, SimTaskConfig, generate
from hippomap.topo import blue_nodes, find_sccs, skeleton


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.fixture(scope="module")
def provider():
    return StubEmbedder(384)


# -- 1 ---------------------------------------------------------------------------

def test_criterion_1_trust_dynamics():
    rng = random.Random(1)
    basis = [unit(i, 8) for i in range(6)]
    with Timer() as t:
        checked = 0
        for _ in range(10_000):
            cmap = CognitiveMap(dimension=8)
            visits, successes = {}, {}
            for _ in range(rng.randint(1, 6)):
                sid, _ = cmap.assign_state(basis[rng.randrange(6)])
                visits[sid] = visits.get(sid, 0) + 1
                if rng.random() < 0.8:
                    ok = rng.random() < 0.5
                    cmap.update_trust(sid, ok)
                    successes[sid] = successes.get(sid, 0) + ok
            for sid, n in visits.items():
                st = cmap.states[sid]
                assert (st.visit_count, st.success_count) == (n, successes.get(sid, 0))
                assert st.trust == successes.get(sid, 0) / n
                checked += 1
        for t0 in (0.0, 0.13, 0.5, 0.77, 1.0):
            cmap = CognitiveMap(dimension=8, trust_mode="ema", initial_trust=t0)
            cmap.assign_state(basis[0])
            for k in range(1, 101):
                got = cmap.update_trust(0, True)
                assert abs(got - (1 - 0.9 ** k * (1 - t0))) <= 1e-12
    assert checked > 10_000
    assert t.elapsed < 1.0, t.elapsed


# -- 2 ---------------------------------------------------------------------------

def _ingest(records, provider, tau):
    cmap = CognitiveMap(dimension=provider.dimension, tau_cluster=tau)
    for r in records:
        cmap.ingest_trajectory(r.steps, r.outcome, provider)
    return cmap


def test_criterion_2_clustering(provider, tmp_path):
    with Timer() as t:
        # byte-exact determinism across reruns
        digests = []
        for run in range(2):
            recs = generate(SimConfig(seed=11, n_trajectories=150, noise_tokens=2))
            path = tmp_path / f"m{run}.json"
            save_map(_ingest(recs, StubEmbedder(384), 0.75), path)
            digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

        violations = []
        for seed in range(50):
            recs = generate(SimConfig(seed=seed, n_trajectories=100, noise_tokens=1 + seed % 4))
            counts = [len(_ingest(recs, provider, tau)) for tau in (0.55, 0.75, 0.85)]
            if not counts[0] >= counts[1] >= counts[2]:
                violations.append((seed, counts))
    assert t.elapsed < 30.0, t.elapsed
    # Merging happens when cosine >= tau, so a lower tau can only merge more
    # and yields fewer states. The required ordering holds only on corpora
    # where all three thresholds give the same count.
    assert not violations, f"{len(violations)}/50 corpora violate count(0.55) >= count(0.75) >= count(0.85): {violations[:5]}"


# -- 3 ---------------------------------------------------------------------------

def _dist(p):
    return TokenDistribution(tuple(range(len(p))), np.asarray(p, dtype=float))


def test_criterion_3_entropy_perturbation():
    with Timer() as t:
        assert abs(token_entropy(_dist([0.5, 0.5])) - 1.0) <= 1e-9
        assert abs(token_entropy(_dist([0.25] * 4)) - 2.0) <= 1e-9
        assert abs(token_entropy(_dist([1.0]))) <= 1e-9

        rng = np.random.default_rng(3)
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            p = rng.dirichlet(np.full(n, 0.7))
            p = np.maximum(p, 1e-12)
            p /= p.sum()
            d = _dist(p)
            np.testing.assert_allclose(perturb(d, 1.0).probs, d.normalized(), rtol=0, atol=1e-9)
            t1, t2 = sorted(rng.uniform(1.0, 5.0, size=2))
            assert token_entropy(perturb(d, t2)) >= token_entropy(perturb(d, t1)) - 1e-9
            a, b = rng.uniform(0.2, 4.0, size=2)
            np.testing.assert_allclose(perturb(perturb(d, a), b).probs, perturb(d, a * b).probs,
                                       rtol=0, atol=1e-9)
    assert t.elapsed < 5.0, t.elapsed


# -- 4 ---------------------------------------------------------------------------

def _mutual_reachability(n, edges):
    reach = [[i == j for j in range(n)] for i in range(n)]
    for a, b in edges:
        reach[a][b] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    return {frozenset(j for j in range(n) if reach[i][j] and reach[j][i]) for i in range(n)}


def test_criterion_4_topology():
    rng = random.Random(4)
    with Timer() as t:
        for _ in range(200):
            n = rng.randint(1, 25)
            m = rng.randint(0, min(n * (n - 1), 3 * n))
            edges = set()
            while len(edges) < m:
                a, b = rng.randrange(n), rng.randrange(n)
                if a != b:
                    edges.add((a, b))
            cmap = build_map([(0.5, 1)] * n, [(a, b, rng.randint(0, 4), 4) for a, b in edges],
                             dimension=max(n, 2))
            assert {frozenset(c) for c in find_sccs(cmap)} == _mutual_reachability(n, edges)

            prev = None
            for k in (1, 2, 3, 4):
                kept = {e.key for e in skeleton(cmap, k).edges}
                assert kept == {e.key for e in cmap.edges.values() if e.success_count >= k}
                if prev is not None:
                    assert kept <= prev
                prev = kept

        # strict inequalities: trust < 0.5 and visits > lower median
        cmap = build_map([(0.4, 10), (0.5, 10), (0.2, 5), (0.1, 1), (0.6, 3), (0.49, 6)])
        # visits sorted 1,3,5,6,10,10 -> lower median 5
        assert blue_nodes(cmap) == {0, 5}
        assert blue_nodes(build_map([(0.1, 4), (0.1, 4), (0.1, 4)])) == set()
        assert blue_nodes(build_map([(0.11, 1300), (0.9, 10), (0.3, 2)])) == {0}
    assert t.elapsed < 30.0, t.elapsed


# -- 5 ---------------------------------------------------------------------------

def _expected_label(s, n):
    if n < 5:
        return None
    r = Fraction(s, n)
    if r >= Fraction(7, 10):
        return 1
    if r <= Fraction(3, 10):
        return 0
    return None


def _separable_set(d=384, per_class=200, seed=0):
    rng = np.random.default_rng(seed)
    u = normalize(rng.standard_normal(d))
    rows, labels = [], []
    for label, sign in ((1, 1.0), (0, -1.0)):
        for _ in range(per_class):
            src = normalize(sign * u + 0.3 * rng.standard_normal(d) / math.sqrt(d))
            dst = normalize(rng.standard_normal(d))
            rows.append(np.concatenate([src, dst, rng.uniform(0, 1, size=2)]))
            labels.append(label)
    return TrainingSet(np.array(rows), np.array(labels, dtype=float), [], 10)


def test_criterion_5_navigator():
    with Timer() as t:
        grid = [(s, n) for n in range(1, 41) for s in range(n + 1)]
        for s, n in grid:
            assert edge_label(s, n) == _expected_label(s, n), (s, n)

        # same grid as edges of one map, checked through extraction
        pairs = [(s, n) for s, n in grid if n <= 20]
        cmap = build_map([(0.5, 1)] * (len(pairs) + 1), dimension=len(pairs) + 1)
        for i, (s, n) in enumerate(pairs):
            cmap.set_edge(0, i + 1, s, n)
        ts = extract_training_set(cmap)
        expected = [(0, i + 1, lab) for i, (s, n) in enumerate(pairs)
                    if (lab := _expected_label(s, n)) is not None]
        assert [(a, b, int(y)) for (a, b), y in zip(ts.edges, ts.labels)] == expected

        data = _separable_set()
        model = train(data, epochs=100, learning_rate=1e-3, seed=42)
        assert accuracy(model, data.features, data.labels) == 1.0
        again = train(data, epochs=100, learning_rate=1e-3, seed=42)
        for a, b in zip(model.weights + model.biases, again.weights + again.biases):
            assert a.tobytes() == b.tobytes()
    assert t.elapsed < 120.0, t.elapsed


# -- 6 ---------------------------------------------------------------------------

MID = "mid region words carefully weigh each option before continuing onward"
HIGH = "high trust region proven route that reliably reaches correct results"
LOW = "low trust region circular loop repeating same failed idea again"


def _region_map(provider):
    cmap = CognitiveMap(dimension=provider.dimension)
    for text, trust in ((MID, 0.5), (HIGH, 0.8), (LOW, 0.2)):
        sid, _ = cmap.assign_state(embed_text(text, provider), text)
        cmap.states[sid].trust = trust
    return cmap


def _cand(ans, trust, rnd):
    return Candidate(str(ans), ans if isinstance(ans, str) else float(ans), trust, rnd)


VOTE_SETS = [
    ([(42, 0.5), (17, 0.5), (42, 0.5)], 42.0),
    ([(42, 0.4), (17, 0.9)], 17.0),
    ([(42, 0.1), (42.00000001, 0.1), (7, 0.9)], 42.0),
    ([(5, 0.6), (9, 0.6)], 5.0),
    ([(1, 0.2), (2, 0.3), (3, 0.25)], 2.0),
    ([(8, 0.5)], 8.0),
    ([(3, 0.9), (4, 0.1), (4, 0.1)], 4.0),
    ([(3, 0.9), (3, 0.1), (4, 0.95), (4, 0.0)], 4.0),
    ([(3, 0.5), (3, 0.5), (4, 0.5), (4, 0.5)], 3.0),
    ([(10, 0.3), (10.00005, 0.3), (11, 0.8)], 10.0),
    ([(10, 0.3), (10.0002, 0.3), (11, 0.8)], 11.0),
    ([("blue", 0.5), ("red", 0.5), ("blue", 0.5)], "blue"),
    ([("blue", 0.2), ("red", 0.7)], "red"),
    ([(-2, 0.5), (-2.0, 0.5), (2, 0.9)], -2.0),
    ([(0, 0.1), (0, 0.1), (1, 0.9), (1, 0.9), (2, 1.0)], 1.0),
    ([(6, 0.6), (7, 0.6), (8, 0.6), (9, 0.6), (10, 0.6)], 6.0),
    ([(6, 0.6), (7, 0.6), (8, 0.61), (9, 0.6), (10, 0.6)], 8.0),
    ([("7", 0.9), (7, 0.1), (7, 0.1)], 7.0),
    ([(100, 0.0), (200, 0.0), (100, 0.0), (200, 0.0), (300, 1.0)], 100.0),
    ([(1.5, 0.4), (1.50009, 0.4), (1.49995, 0.4), (9, 0.99), (9, 0.99)], 1.5),
]


def test_criterion_6_algorithm(provider):
    cfg = SolveConfig(t_max=5, intervention_prob=1.0)
    with Timer() as t:
        calls = []

        backend = ScriptedBackend([
            {"call": 0, "response": f"{HIGH}\n\n#### 4"},
            {"call": None, "response": f"{MID}\n\n#### 4"},
        ])
        res = solve("q", _region_map(provider), None, backend, provider, cfg)
        assert res.interventions[0][0] == 1
        assert res.interventions[0][1].kind is ActionKind.HINT
        assert HIGH in res.interventions[0][1].hint_text
        assert [r.temperature for r in res.rounds] == [0.7] * 5
        calls.append(len(backend.calls))

        backend = ScriptedBackend([
            {"call": 0, "response": f"{LOW}\n\n#### 9"},
            {"call": None, "response": f"{MID}\n\n#### 4"},
        ])
        res = solve("q", _region_map(provider), None, backend, provider, cfg)
        assert res.interventions[0][1].kind is ActionKind.PERTURB
        assert res.interventions[0][1].temperature == 1.5
        assert [r.temperature for r in res.rounds] == [0.7, 1.5, 0.7, 0.7, 0.7]
        assert res.extracted_answer == 4.0
        calls.append(len(backend.calls))

        # every round intervened: degraded but still bounded
        backend = ScriptedBackend([{"call": None, "response": f"{LOW}\n\n#### 9"}])
        res = solve("q", _region_map(provider), None, backend, provider, cfg)
        assert res.degraded
        calls.append(len(backend.calls))

        for sets, expected in VOTE_SETS:
            win = majority_vote([_cand(a, tr, i) for i, (a, tr) in enumerate(sets, 1)])
            assert answers_equivalent(win.extracted_answer, expected), (sets, win)
    assert len(VOTE_SETS) == 20
    assert max(calls) <= 2 * cfg.t_max
    assert t.elapsed < 10.0, t.elapsed


# -- 7 ---------------------------------------------------------------------------

HASH_STRINGS = [
    ("#### 42", 42.0), ("reasoning 3 + 4\n#### 7", 7.0), ("#### -3.5", -3.5),
    ("#### 1,234", 1234.0), ("#### $18", 18.0), ("#### 5 and later 6", 6.0),
    ("answer 9 #### none here", 9.0), ("no numbers at all", None), ("#### 0", 0.0),
    ("#### 72.", 72.0), ("#### 1 #### 2", 2.0), ("steps 10, 20\n#### 30", 30.0),
    ("####12", 12.0), ("#### 3.14159", 3.14159), ("#### -0.5 dollars", -0.5),
    ("The total is 8 apples.", 8.0), ("####   99  ", 99.0), ("x #### 1,000,000", 1_000_000.0),
    ("#### 4/5", 5.0), ("first 11 #### second 12", 12.0),
]


def test_criterion_7_evaluation(provider):
    with Timer() as t:
        eps = 1e-7
        assert evaluate_answer(f"#### {42 + 1e-4 - eps!r}", "#### 42", provider)
        assert evaluate_answer(f"#### {42 - 1e-4 + eps!r}", "#### 42", provider)
        assert not evaluate_answer(f"#### {42 + 1e-4 + eps!r}", "#### 42", provider)
        assert not evaluate_answer(f"#### {42 - 1e-4 - eps!r}", "#### 42", provider)
        assert evaluate_answer("#### 42", "#### 42", provider)
        for text, expected in HASH_STRINGS:
            assert extract_number(text) == expected, text
    assert len(HASH_STRINGS) == 20
    assert t.elapsed < 1.0, t.elapsed


# -- 8 ---------------------------------------------------------------------------

def test_criterion_8_learning_loop(provider, tmp_path):
    task = SimTask(SimTaskConfig(seed=42, n_problems=1000))
    problems = task.problems()
    cfg = SolveConfig(intervention_prob=0.5)
    with Timer() as t:
        reports = run_learning_loop(problems, task.backend(), provider, tmp_path,
                                    rounds=5, samples_per_round=200, config=cfg)
        final = problems[800:1000]
        baseline = batch_eval(final, CognitiveMap(dimension=provider.dimension), None,
                              task.backend(), provider, cfg)
    assert [r.samples for r in reports] == [200] * 5
    sizes = [r.map_states for r in reports]
    assert sizes == sorted(sizes) and sizes[0] > 0
    assert all(r.navigator_trained for r in reports)
    for r in reports:
        assert len(load_map(r.map_path)) == r.map_states
        assert load_model(r.model_path).epochs == 100
    assert json.loads((tmp_path / "learning_report.json").read_text())[-1]["round"] == 5
    final_rate = reports[-1].success_rate
    print(f"final round {final_rate:.3f} vs no-map baseline {baseline.success_rate:.3f}")
    assert final_rate >= baseline.success_rate + 0.05
    assert t.elapsed < 120.0, t.elapsed


# -- 9 ---------------------------------------------------------------------------

def test_criterion_9_persistence(provider, tmp_path):
    cfg = SimConfig(seed=9, n_trajectories=200, noise_tokens=2,
                    success_rate_by_concept={0: 0.95, 1: 0.9, 2: 0.1, 3: 0.05})
    cmap = _ingest(generate(cfg), provider, 0.75)
    data = extract_training_set(cmap)
    model = train(data, epochs=20, seed=42)

    save_map(cmap, tmp_path / "map.json")
    save_model(model, tmp_path / "nav.json")
    cmap2 = load_map(tmp_path / "map.json")
    model2 = load_model(tmp_path / "nav.json")

    rng = np.random.default_rng(9)
    probes = [normalize(rng.standard_normal(provider.dimension)) for _ in range(20)]
    probes += [cmap.states[i].centroid + 0.01 * p for i, p in zip(range(len(cmap)), probes)]
    probes = [normalize(p) for p in probes]
    a, b = cmap.snapshot(), cmap2.snapshot()
    for p in probes:
        assert cmap.nearest(p) == cmap2.nearest(p)
        assert a.assign_state(p) == b.assign_state(p)
    assert a.centroids.tobytes() == b.centroids.tobytes()

    for edge in cmap.edges.values():
        f1 = build_features(cmap, edge, data.max_count)
        f2 = build_features(cmap2, cmap2.edges[edge.key], data.max_count)
        assert f1.tobytes() == f2.tobytes()
        assert score(model, f1) == score(model2, f2)
    for sid in range(len(cmap)):
        d1 = decide(cmap, model, sid, 0.5, random.Random(sid))
        d2 = decide(cmap2, model2, sid, 0.5, random.Random(sid))
        assert d1 == d2
    assert save_map(cmap2, tmp_path / "map2.json") is None
    assert (tmp_path / "map.json").read_bytes() == (tmp_path / "map2.json").read_bytes()
