import random

import pytest

from metaner.errors import ContractViolation
from metaner.evaluation import Span, extract_spans, phrase_f1
from oracles import all_label_sequences, reference_spans


def _spans(labels):
    return {(s.start, s.end, s.type) for s in extract_spans(labels)}


def test_matches_reference_on_every_short_sequence():
    count = 0
    for labels in all_label_sequences(6):
        assert _spans(labels) == reference_spans(labels), labels
        count += 1
    assert count == sum(5 ** n for n in range(7))


def test_matches_reference_on_random_length_eight():
    rng = random.Random(0)
    tags = ["O", "B-A", "I-A", "B-B", "I-B"]
    for _ in range(20000):
        labels = [rng.choice(tags) for _ in range(8)]
        assert _spans(labels) == reference_spans(labels)


@pytest.mark.parametrize("labels,expected", [
    (["I-PER"], {(0, 0, "PER")}),
    (["I-PER", "I-PER"], {(0, 1, "PER")}),
    (["B-PER", "I-PER", "O", "B-LOC"], {(0, 1, "PER"), (3, 3, "LOC")}),
    (["O", "I-PER", "I-PER"], {(1, 2, "PER")}),
    (["B-PER", "I-LOC"], {(0, 0, "PER"), (1, 1, "LOC")}),
    (["B-PER", "B-PER"], {(0, 0, "PER"), (1, 1, "PER")}),
    (["B-ORG", "I-ORG", "O", "I-ORG"], {(0, 1, "ORG"), (3, 3, "ORG")}),
    (["O", "O"], set()),
    ([], set()),
])
def test_orphan_and_boundary_fixtures(labels, expected):
    assert _spans(labels) == expected


def test_perfect_prediction():
    gold = [["B-PER", "I-PER", "O"], ["B-LOC"]]
    r = phrase_f1(gold, gold)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_partial_match_counts_as_wrong():
    gold = [["B-PER", "I-PER", "O", "B-LOC"]]
    pred = [["B-PER", "O", "O", "B-LOC"]]
    r = phrase_f1(gold, pred)
    assert (r.gold, r.predicted, r.correct) == (2, 2, 1)
    assert r.f1 == 0.5
    assert r.per_type["PER"][2] == 0 and r.per_type["LOC"][5] == 1.0


def test_worked_precision_recall():
    gold = [["B-PER", "O", "B-LOC", "O", "B-ORG"]]
    pred = [["B-PER", "O", "B-ORG", "O", "O"]]
    r = phrase_f1(gold, pred)
    assert r.precision == 0.5
    assert abs(r.recall - 1 / 3) < 1e-15
    assert abs(r.f1 - 0.4) < 1e-15


def test_extra_prediction_halves_precision():
    r = phrase_f1([["B-PER", "I-PER", "O", "O"]], [["B-PER", "I-PER", "O", "B-LOC"]])
    assert (r.precision, r.recall) == (0.5, 1.0)
    assert abs(r.f1 - 2 / 3) < 1e-15


def test_boundary_off_by_one_scores_zero():
    assert phrase_f1([["B-PER", "I-PER", "O"]], [["B-PER", "I-PER", "I-PER"]]).f1 == 0.0


def test_empty_predictions_score_zero():
    r = phrase_f1([["B-PER"]], [["O"]])
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    r = phrase_f1([["O"]], [["O"]])
    assert r.f1 == 0.0


def test_sentence_order_does_not_matter():
    rng = random.Random(1)
    tags = ["O", "B-A", "I-A", "B-B", "I-B"]
    gold = [[rng.choice(tags) for _ in range(rng.randint(1, 9))] for _ in range(50)]
    pred = [[rng.choice(tags) for _ in g] for g in gold]
    order = list(range(50))
    rng.shuffle(order)
    a = phrase_f1(gold, pred)
    b = phrase_f1([gold[i] for i in order], [pred[i] for i in order])
    assert (a.gold, a.predicted, a.correct, a.f1) == (b.gold, b.predicted, b.correct, b.f1)


def test_length_mismatches_are_rejected():
    with pytest.raises(ContractViolation):
        phrase_f1([["O"]], [])
    with pytest.raises(ContractViolation, match="sentence 0"):
        phrase_f1([["O", "O"]], [["O"]])


def test_report_lines_and_table():
    r = phrase_f1([["B-PER", "O", "B-LOC"]], [["B-PER", "O", "O"]])
    lines = r.lines()
    assert lines[0].startswith("scope=overall gold=2 predicted=1 correct=1")
    assert [l.split()[0] for l in lines[1:]] == ["scope=LOC", "scope=PER"]
    assert "overall" in r.table().splitlines()[1]


def test_span_ordering():
    assert Span(0, 1, "A") < Span(1, 1, "A")
