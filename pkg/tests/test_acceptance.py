"""Acceptance criteria, one test per criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -s` (or -rA) to see the lines.
Every tolerance is pinned here; nothing is calibrated after the fact.
"""

import math
import os
import time
from random import Random

import pytest

from convsearch.harness import AlwaysPolicy, BM25Retriever, LexicalPolicy, run_proactive
from convsearch.index import InvertedIndex, tokenize
from convsearch.lmgr import build_grounding_corpus, lmgr_retrieve
from convsearch.metrics import (
    average_precision,
    evaluate_reactive,
    ipdcg,
    ndcg,
    npdcg,
    pdcg,
    recall_at_k,
    reciprocal_rank,
    rel_gain,
)
from convsearch.models import Conversation, Document, Qrel, TurnRun, Utterance
from convsearch.pooling import aggregate_labels, build_pools, fleiss_kappa

from _oracles import (
    ap_oracle,
    best_pdcg_by_enumeration,
    bm25_scores_oracle,
    ipdcg_oracle,
    mrr_oracle,
    ndcg_oracle,
    npdcg_oracle,
    pdcg_oracle,
    recall_oracle,
)
from test_lmgr import (
    GENERATION_TEXT,
    ScriptedLlmProvider,
    fixture_table,
    scripted_pipeline,
    ten_doc_corpus,
)


def check(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name} failed: {detail}"


def random_instance(rng: Random):
    m = rng.randint(1, 4)
    n_docs = rng.randint(1, 5)
    doc_ids = [f"d{i}" for i in range(n_docs)]
    qrels = {
        d: (rng.randint(0, 2), rng.randint(1, m))
        for d in doc_ids
        if rng.random() < 0.85
    }
    lists = {}
    for turn in range(1, m + 1):
        if rng.random() < 0.7:
            pool = doc_ids + ["x1", "x2"]
            rng.shuffle(pool)
            size = rng.randint(0, len(pool))
            if size:
                lists[turn] = pool[:size]
    return lists, qrels, m


def test_npdcg_oracle_equivalence():
    """Streaming pdcg/ipdcg/npdcg match a literal-definition oracle on 1000+
    random instances within 1e-12, in under 10 seconds."""
    started = time.monotonic()
    rng = Random(20240901)
    cases = 0
    worst = 0.0
    for _ in range(1100):
        lists, qrels, m = random_instance(rng)
        for k in (1, 3, 5):
            drift = abs(pdcg(lists, qrels, k) - pdcg_oracle(lists, qrels, k))
            drift = max(drift, abs(ipdcg(qrels, m, k) - ipdcg_oracle(qrels, m, k)))
            mine = npdcg(lists, qrels, m, k)
            ref = npdcg_oracle(lists, qrels, m, k)
            if (mine is None) != (ref is None):
                check("npdcg-oracle-equivalence", False, "undefined mismatch")
            if mine is not None:
                drift = max(drift, abs(mine - ref))
            worst = max(worst, drift)
            cases += 1
    elapsed = time.monotonic() - started
    check(
        "npdcg-oracle-equivalence",
        worst <= 1e-12 and elapsed < 10.0 and cases >= 3000,
        f"{cases} checks, worst drift {worst:.2e}, {elapsed:.1f}s",
    )


def test_no_enumerated_run_exceeds_ipdcg():
    """Exhaustive placement search never beats the ideal model's pdcg.

    Faithful to the stated criterion. It does not hold under the pinned
    definitions: the ideal model averages over every relevant turn, so a run
    engaging only at the most profitable turn (or bundling late) can exceed
    its average. The failure detail carries the first counterexample.
    """
    rng = Random(77)
    violation = None
    for _ in range(60):
        lists, qrels, m = random_instance(rng)
        relevant = {d: gl for d, gl in qrels.items() if gl[0] >= 1}
        if not relevant:
            continue
        reference = ipdcg(qrels, m, 5)
        best, best_lists = best_pdcg_by_enumeration(relevant, m, 5)
        if best > reference + 1e-12:
            violation = (relevant, m, reference, best, best_lists)
            break
    detail = "no violations found" if violation is None else (
        f"qrels={violation[0]} m={violation[1]}: ipdcg={violation[2]:.6f} "
        f"but run {violation[4]} reaches pdcg={violation[3]:.6f}"
    )
    check("ideal-upper-bounds-enumerated-runs", violation is None, detail)


def test_worked_example_exact():
    qrels = {"A": (2, 1), "B": (1, 2)}
    run = {1: ["A"], 2: ["A", "B"]}
    value_p = pdcg(run, qrels, 5)
    value_n = npdcg(run, qrels, 2, 5)
    ok = value_p == 1.5 and value_n == 1.0
    check("worked-example", ok, f"pdcg={value_p} npdcg={value_n}")


def test_delay_penalty():
    on_time = rel_gain(2, 1, 1)
    late = rel_gain(2, 2, 1)
    ok = on_time == 2.0 and abs(late - 2 / math.log2(3)) <= 1e-9
    check("delay-penalty", ok, f"on_time={on_time} late={late:.6f}")


def reactive_fixtures():
    # five hand-built conversations: ranking plus graded qrels
    return [
        ("c1", ["A", "B", "C"], {"A": 2, "B": 1}),
        ("c2", ["x", "A", "y", "B"], {"A": 2, "B": 2, "C": 1}),
        ("c3", ["x", "y"], {"A": 1}),
        ("c4", ["A"], {"A": 1, "B": 2, "C": 2, "D": 1}),
        ("c5", ["B", "A", "C", "D", "E", "F"], {"A": 2, "C": 1, "E": 1, "F": 2}),
    ]


def test_reactive_metric_fixtures():
    worst = 0.0
    for conv_id, ranked, grades in reactive_fixtures():
        qrels = {d: (g, 1) for d, g in grades.items()}
        relevant = {d for d, g in grades.items() if g >= 1}
        for k in (1, 3, 5, 10):
            mine = ndcg(ranked, qrels, k)
            ref = ndcg_oracle(ranked, qrels, k)
            worst = max(worst, abs(mine - ref))
            worst = max(
                worst,
                abs(recall_at_k(ranked, relevant, k) - recall_oracle(ranked, relevant, k)),
            )
        worst = max(worst, abs(reciprocal_rank(ranked, relevant) - mrr_oracle(ranked, relevant)))
        worst = max(worst, abs(average_precision(ranked, relevant) - ap_oracle(ranked, relevant)))
    # and through the report-level evaluator
    runs = [
        TurnRun(conv_id, 1, tuple((d, float(len(rk) - i)) for i, d in enumerate(rk)), "t")
        for conv_id, rk, _ in reactive_fixtures()
    ]
    qrel_rows = [
        Qrel(conv_id, d, g, 1)
        for conv_id, _, grades in reactive_fixtures()
        for d, g in grades.items()
    ]
    report = evaluate_reactive(runs, qrel_rows, [5])
    for conv_id, ranked, grades in reactive_fixtures():
        qrels = {d: (g, 1) for d, g in grades.items()}
        worst = max(
            worst,
            abs(report.per_conversation["ndcg@5"][conv_id] - ndcg_oracle(ranked, qrels, 5)),
        )
    check("reactive-metric-fixtures", worst <= 1e-9, f"worst drift {worst:.2e}")


def synthetic_corpus(n_docs=1000, seed=31):
    rng = Random(seed)
    vocab = [f"w{i}" for i in range(800)]
    docs = []
    for i in range(n_docs):
        length = rng.randint(20, 150)
        words = [vocab[min(int(rng.expovariate(0.008)), 799)] for _ in range(length)]
        docs.append(
            Document(f"d{i:05d}", f"doc {rng.choice(vocab)}", " ".join(words), "s")
        )
    return docs


def test_bm25_oracle_equivalence():
    started = time.monotonic()
    docs = synthetic_corpus()
    index = InvertedIndex.build(docs)
    doc_tokens = [tokenize(d.title + " " + d.text) for d in docs]
    rng = Random(8)
    worst = 0.0
    ordering_ok = True
    for _ in range(40):
        terms = [f"w{rng.randint(0, 900)}" for _ in range(rng.randint(1, 12))]
        query = " ".join(terms)
        mine = index.search(query, len(docs))
        scores = bm25_scores_oracle(tokenize(query), doc_tokens)
        expected = sorted(
            ((docs[i].doc_id, s) for i, s in enumerate(scores) if s != 0.0),
            key=lambda pair: (-pair[1], pair[0]),
        )
        if [d for d, _ in mine] != [d for d, _ in expected]:
            ordering_ok = False
            break
        for (_, a), (_, b) in zip(mine, expected):
            worst = max(worst, abs(a - b))
    elapsed = time.monotonic() - started
    check(
        "bm25-oracle-equivalence",
        ordering_ok and worst <= 1e-9 and elapsed < 30.0,
        f"1000 docs, 40 queries, worst drift {worst:.2e}, {elapsed:.1f}s",
    )


def test_lmgr_mock_end_to_end():
    from convsearch.formats import read_run, write_run

    runs = []
    for _ in range(2):
        llm, embedder, grounding = scripted_pipeline()
        results = lmgr_retrieve(llm, embedder, grounding, "conversation text", n=20, k=3)
        runs.append(results)
    deterministic = runs[0] == runs[1]
    traced = runs[0] == [("n01", 1.0), ("n03", 0.5)]
    docs = [d for d, _ in runs[0]]
    bounded = len(docs) <= 20 and len(docs) == len(set(docs))

    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run.tsv")
        write_run([TurnRun("c1", 1, tuple(runs[0]), "lmgr")], path)
        valid = read_run(path)[0].ranked == tuple(runs[0])
    check(
        "lmgr-mock-end-to-end",
        deterministic and traced and bounded and valid,
        f"result={runs[0]}",
    )


def test_pooling_properties():
    def run_of(conv_id, docs, tag):
        ranked = tuple((d, float(len(docs) - i)) for i, d in enumerate(docs))
        return [TurnRun(conv_id, 1, ranked, tag)]

    fixture = [
        run_of("c1", [f"a{i}" for i in range(12)], "r0"),
        run_of("c1", [f"a{i}" for i in range(5)] + [f"b{i}" for i in range(7)], "r1"),
        run_of("c1", [f"b{i}" for i in range(12)], "r2"),
        run_of("c1", [f"c{i}" for i in range(12)], "r3"),
        run_of("c1", ["a0", "b0", "c0"] + [f"e{i}" for i in range(9)], "r4"),
    ]
    pools = build_pools(fixture, depth=10)
    hand_union = []
    for run in fixture:
        for doc in run[0].doc_ids[:10]:
            if doc not in hand_union:
                hand_union.append(doc)
    ok = (
        len(pools) == 1
        and list(pools[0].doc_ids) == hand_union
        and len(pools[0].doc_ids) <= 50
    )
    check("pooling-union-dedup-bound", ok, f"pool size {len(pools[0].doc_ids)}")


def test_aggregation_and_kappa():
    import itertools

    covered = True
    for labels in itertools.product((0, 1, 2), repeat=3):
        result = aggregate_labels(list(labels))
        counts = {v: labels.count(v) for v in set(labels)}
        top = max(counts.values())
        if top >= 2:
            covered &= result == max(v for v, c in counts.items() if c == top)
        else:
            covered &= sorted(labels) == [0, 1, 2] and result == 2
    fixture = fleiss_kappa([[0, 0, 3], [2, 0, 1]])
    perfect = fleiss_kappa([[3, 0, 0], [0, 0, 3], [0, 3, 0]])
    ok = (
        covered
        and fixture is not None
        and abs(fixture - 0.25) <= 1e-9
        and perfect == 1.0
    )
    check(
        "aggregation-and-kappa",
        ok,
        f"fixture kappa={fixture}, perfect={perfect}",
    )


def test_harness_causality():
    docs = [
        Document("d1", "Apples", "apples grow on trees in orchards", "s"),
        Document("d2", "Bananas", "bananas are yellow tropical fruit", "s"),
        Document("d3", "Cars", "cars drive fast on roads", "s"),
    ]
    index = InvertedIndex.build(docs)
    rng = Random(404)
    words = ["apples", "bananas", "cars", "trees", "yellow", "roads", "zzz", "qqq"]
    ok = True
    for _ in range(200):
        n = rng.randint(2, 6)
        texts = [" ".join(rng.choices(words, k=4)) for _ in range(n)]
        i = rng.randint(1, n - 1)
        mutated = list(texts)
        mutated[i] = " ".join(rng.choices(words, k=6))
        conv_a = Conversation(
            id="c", category="x", title="t",
            utterances=tuple(Utterance(j, "u", t) for j, t in enumerate(texts, 1)),
        )
        conv_b = Conversation(
            id="c", category="x", title="t",
            utterances=tuple(Utterance(j, "u", t) for j, t in enumerate(mutated, 1)),
        )
        for policy in (AlwaysPolicy(), LexicalPolicy(index, 0.0)):
            runs_a = run_proactive(policy, BM25Retriever(index), [conv_a], 3)
            runs_b = run_proactive(policy, BM25Retriever(index), [conv_b], 3)
            if [r for r in runs_a if r.turn_index <= i] != [r for r in runs_b if r.turn_index <= i]:
                ok = False
    check("harness-causality", ok, "200 random mutations, 2 policies")


def test_annotation_round_trip_feeds_evaluator():
    """Primary-side hook for the UI criterion: judgments collected through
    the HTTP service export qrels the evaluator accepts, with no UI built."""
    from fastapi.testclient import TestClient

    from convsearch.formats import read_qrels
    from convsearch.metrics import evaluate_proactive
    from convsearch.pooling import PoolEntry
    from convsearch.service import AnnotationState, create_app
    import tempfile

    conversations = {
        "c1": Conversation(
            id="c1", category="s", title="apples",
            utterances=(Utterance(1, "a", "I love apples. They are crisp."),),
        )
    }
    state = AnnotationState(
        pools={"c1": PoolEntry("c1", ("d1",), ("r",))},
        conversations=conversations,
        replication=3,
    )
    client = TestClient(create_app(state))
    for worker in ("w1", "w2", "w3"):
        response = client.post("/judgment", json={
            "worker_id": worker, "conversation_id": "c1", "doc_id": "d1",
            "label": 2, "evidence": [{"turn": 1, "char_start": 0, "char_end": 4}],
            "summary": "someone is very fond of crisp apples",
        })
        assert response.status_code == 200
    body = client.get("/export/qrels").text
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "qrels.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write(body)
        qrels = read_qrels(path)
    report = evaluate_proactive(
        [TurnRun("c1", 1, (("d1", 1.0),), "r")], qrels, [5]
    )
    value = report.per_conversation["npdcg@5"]["c1"]
    check("annotation-round-trip", value == 1.0, f"npdcg={value}")


@pytest.mark.skipif(
    "CONVSEARCH_DATA_DIR" not in os.environ,
    reason="full dataset not downloaded; set CONVSEARCH_DATA_DIR to run",
)
def test_data_scale_statistics():
    """Optional: with the released test split and full corpus downloaded,
    the stats op reproduces the published test-column values and BM25
    reactive nDCG@5 lands within the stated tolerance."""
    import json
    from pathlib import Path

    from convsearch.formats import read_conversations, read_corpus, read_qrels
    from convsearch.harness import run_reactive
    from convsearch.ingest import compute_stats

    data = Path(os.environ["CONVSEARCH_DATA_DIR"])
    conversations = list(read_conversations(data / "test.jsonl"))
    stats = compute_stats(conversations)
    ok = (
        stats.total_conversations == 100
        and abs(stats.avg_turns[0] - 4.49) <= 0.005
        and abs(stats.avg_links[0] - 1.15) <= 0.005
    )
    check("data-scale-stats", ok, json.dumps(stats.to_dict()["avg_turns"]))

    index = InvertedIndex.build(read_corpus(data / "corpus.jsonl"))
    runs = run_reactive(BM25Retriever(index), conversations, 100)
    qrels = read_qrels(data / "qrels.tsv")
    report = evaluate_reactive(runs, qrels, [5])
    value = report.mean("ndcg@5")
    check("data-scale-bm25", abs(value - 0.0654) <= 0.03, f"ndcg@5={value:.4f}")
