from random import Random

import pytest

from convsearch.harness import (
    AlwaysPolicy,
    BM25Retriever,
    LexicalPolicy,
    NeverPolicy,
    ThresholdPolicy,
    build_context,
    make_policy_training_pairs,
    paired_permutation_test,
    read_scores,
    run_proactive,
    run_reactive,
)
from convsearch.index import InvertedIndex
from convsearch.models import Conversation, Document, Qrel, Utterance, ValidationError

from test_models import make_conversation


def corpus_docs():
    return [
        Document("d1", "Apples", "apples grow on trees in orchards", "apples grow on trees."),
        Document("d2", "Bananas", "bananas are yellow tropical fruit", "bananas are yellow."),
        Document("d3", "Cars", "cars drive on roads with engines", "cars drive on roads."),
    ]


def conv(conv_id, texts, title="title words"):
    return Conversation(
        id=conv_id,
        category="cat",
        title=title,
        utterances=tuple(
            Utterance(i, f"u{i}", t) for i, t in enumerate(texts, 1)
        ),
    )


@pytest.fixture
def index():
    return InvertedIndex.build(corpus_docs())


def test_reactive_context_includes_title_and_all_turns():
    c = conv("c1", ["first turn", "second turn"])
    assert build_context(c.title, c.utterances) == "title words\nfirst turn\nsecond turn"


def test_reactive_single_utterance(index):
    c = conv("c1", ["apples are great"], title="fruit talk")
    captured = {}

    class Spy:
        def retrieve(self, context, k):
            captured["context"] = context
            return [("d1", 1.0)]

    runs = run_reactive(Spy(), [c], 5)
    assert captured["context"] == "fruit talk\napples are great"
    assert runs[0].turn_index == 1


def test_reactive_equals_direct_search(index):
    c = conv("c1", ["apples grow", "bananas too"])
    runs = run_reactive(BM25Retriever(index), [c], 3)
    direct = index.search("title words\napples grow\nbananas too", 3)
    assert runs[0].ranked == tuple(direct)
    assert runs[0].turn_index == 2


def test_reactive_k_zero_is_error(index):
    with pytest.raises(ValidationError):
        run_reactive(BM25Retriever(index), [make_conversation()], 0)


def test_proactive_always_engages_every_turn(index):
    c = conv("c1", ["apples grow", "bananas are yellow", "cars drive"])
    runs = run_proactive(AlwaysPolicy(), BM25Retriever(index), [c], 3)
    assert [r.turn_index for r in runs] == [1, 2, 3]


def test_proactive_never_is_empty(index):
    c = conv("c1", ["apples grow", "bananas are yellow"])
    runs = run_proactive(NeverPolicy(), BM25Retriever(index), [c], 3)
    assert runs == []


def test_proactive_always_final_turn_equals_reactive(index):
    c = conv("c1", ["apples grow", "bananas are yellow", "cars drive fast"])
    proactive = run_proactive(AlwaysPolicy(), BM25Retriever(index), [c], 3)
    reactive = run_reactive(BM25Retriever(index), [c], 3)
    final = [r for r in proactive if r.turn_index == c.length][0]
    assert final.ranked == reactive[0].ranked


def test_threshold_policy_engages_above_tau(index):
    scores = {("c1", 1): 0.2, ("c1", 2): 0.9, ("c1", 3): 0.5}
    c = conv("c1", ["apples grow", "bananas are yellow", "cars drive"])
    runs = run_proactive(ThresholdPolicy(scores, 0.5), BM25Retriever(index), [c], 3)
    assert [r.turn_index for r in runs] == [2]


def test_threshold_extremes(index):
    scores = {("c1", i): 0.5 for i in (1, 2)}
    c = conv("c1", ["apples grow", "bananas are yellow"])
    as_always = run_proactive(
        ThresholdPolicy(scores, float("-inf")), BM25Retriever(index), [c], 3
    )
    assert [r.turn_index for r in as_always] == [1, 2]
    as_never = run_proactive(
        ThresholdPolicy(scores, float("inf")), BM25Retriever(index), [c], 3
    )
    assert as_never == []


def test_lexical_policy_zero_hits_never_engages(index):
    policies_hit = LexicalPolicy(index, tau=-1.0)
    c = conv("c1", ["zzz qqq www"])  # nothing in the index matches
    runs = run_proactive(policies_hit, BM25Retriever(index), [c], 3)
    assert runs == []


def test_lexical_policy_engages_on_strong_match(index):
    policy = LexicalPolicy(index, tau=0.0)
    c = conv("c1", ["apples orchards trees", "nothing matching here zzz"])
    runs = run_proactive(policy, BM25Retriever(index), [c], 3)
    assert [r.turn_index for r in runs] == [1]


def test_scores_file_roundtrip(tmp_path):
    path = tmp_path / "scores.tsv"
    path.write_text("c1\t1\t0.25\nc1\t2\t0.75\nc2\t1\t-1.5\n")
    scores = read_scores(path)
    assert scores == {("c1", 1): 0.25, ("c1", 2): 0.75, ("c2", 1): -1.5}


def test_causality_mutating_future_turn(index):
    # altering utterance i+1 never changes what was emitted at turns <= i
    rng = Random(101)
    words = ["apples", "bananas", "cars", "orchards", "yellow", "roads", "zzz"]
    for _ in range(30):
        n = rng.randint(2, 5)
        texts = [" ".join(rng.choices(words, k=4)) for _ in range(n)]
        c1 = conv("c", texts)
        i = rng.randint(1, n - 1)
        mutated = list(texts)
        mutated[i] = "completely different mutated utterance"
        c2 = conv("c", mutated)
        for policy in (AlwaysPolicy(), LexicalPolicy(index, 0.0)):
            runs1 = run_proactive(policy, BM25Retriever(index), [c1], 3)
            runs2 = run_proactive(policy, BM25Retriever(index), [c2], 3)
            prefix1 = [r for r in runs1 if r.turn_index <= i]
            prefix2 = [r for r in runs2 if r.turn_index <= i]
            assert prefix1 == prefix2


# -- policy training pairs --

def test_training_pairs_balanced():
    convs = [conv(f"c{j}", [f"text {i}" for i in range(1, 5)]) for j in range(3)]
    qrels = [
        Qrel("c0", "d1", 2, 2),
        Qrel("c1", "d1", 1, 1),
        Qrel("c2", "d2", 2, 3),
    ]
    pairs = make_policy_training_pairs(convs, qrels, seed=5)
    assert len(pairs) == 6
    assert sum(p.label for p in pairs) == 3
    positives = {(p.conversation_id, p.turn_index) for p in pairs if p.label == 1}
    assert positives == {("c0", 2), ("c1", 1), ("c2", 3)}


def test_training_pairs_deterministic():
    convs = [conv(f"c{j}", [f"text {i}" for i in range(1, 6)]) for j in range(4)]
    qrels = [Qrel("c0", "d1", 2, 1), Qrel("c3", "d2", 1, 4)]
    a = make_policy_training_pairs(convs, qrels, seed=42)
    b = make_policy_training_pairs(convs, qrels, seed=42)
    assert a == b


def test_training_pairs_insufficient_negatives():
    convs = [conv("c0", ["only text"])]
    qrels = [Qrel("c0", "d1", 2, 1)]
    with pytest.raises(ValidationError) as err:
        make_policy_training_pairs(convs, qrels)
    assert "insufficient negatives" in str(err.value)


def test_grade_zero_qrels_are_not_positives():
    convs = [conv("c0", ["a text", "b text"])]
    qrels = [Qrel("c0", "d1", 0, 1)]
    pairs = make_policy_training_pairs(convs, qrels)
    assert pairs == []


# -- permutation test --

def test_permutation_identical_metrics_p_one():
    a = [0.5, 0.2, 0.9, 0.4]
    assert paired_permutation_test(a, list(a), iterations=1000) == 1.0


def test_permutation_uniform_improvement_tiny_p():
    a = [float(i % 7) + 1.0 for i in range(100)]
    b = [x - 1.0 for x in a]
    p = paired_permutation_test(a, b, iterations=10000, seed=3)
    assert p <= 0.001


def test_permutation_single_conversation_p_one():
    assert paired_permutation_test([0.9], [0.1], iterations=10000) == 1.0


def test_permutation_deterministic_under_seed():
    rng = Random(8)
    a = [rng.random() for _ in range(40)]
    b = [rng.random() for _ in range(40)]
    p1 = paired_permutation_test(a, b, iterations=2000, seed=11)
    p2 = paired_permutation_test(a, b, iterations=2000, seed=11)
    assert p1 == p2


def test_permutation_length_mismatch():
    with pytest.raises(ValidationError):
        paired_permutation_test([1.0], [1.0, 2.0])


def test_baseline_policies_factory(index):
    from convsearch.harness import baseline_policies

    minimal = baseline_policies()
    assert set(minimal) == {"always", "never"}
    full = baseline_policies(scores={("c1", 1): 0.7}, tau=0.4, index=index)
    assert set(full) == {"always", "never", "threshold", "lexical"}
    view_args = dict(conversation_id="c1", history=(), current=Utterance(1, "u", "apples"))
    from convsearch.harness import TurnView

    view = TurnView(**view_args)
    assert full["always"].decide(view) is True
    assert full["never"].decide(view) is False
    assert full["threshold"].decide(view) is True
