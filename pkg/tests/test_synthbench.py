import numpy as np
import pytest

from metaner.corpus import format_conll, parse_conll
from metaner.errors import ConfigError
from metaner.evaluation import extract_spans
from metaner.synthbench import ONSETS, TEMPLATES, VOWELS, SynthConfig, generate

SMALL = SynthConfig(stems_per_type=40, train_size=500, test_size=200, target_train_size=30)


@pytest.fixture(scope="module")
def data():
    return generate(SMALL)


def test_exact_counts(data):
    assert (len(data.source), len(data.target_test), len(data.target_train)) == (500, 200, 30)
    assert generate(SynthConfig(train_size=3, test_size=1)).target_train == []


def _valid_bio(labels):
    prev = "O"
    for tag in labels:
        if tag.startswith("I-") and prev[2:] != tag[2:]:
            return False
        prev = tag
    return True


def test_labels_are_valid_bio(data):
    for s in data.source + data.target_test + data.target_train:
        assert _valid_bio(s.labels)
        assert len(s.tokens) == len(s.labels)


def test_deterministic_under_seed():
    a, b = generate(SMALL), generate(SMALL)
    assert a.source == b.source and a.target_test == b.target_test
    c = generate(SynthConfig(stems_per_type=40, train_size=500, test_size=200, seed=1))
    assert c.source != a.source


def test_entity_surfaces_map_back_to_stems(data):
    for corpus, lang in ((data.source, data.source_language),
                         (data.target_test, data.target_language)):
        for s in corpus:
            for span in extract_spans(s.labels):
                for i in range(span.start, span.end + 1):
                    stem, kind = lang.stems[s.tokens[i]]
                    assert kind == span.type


def test_labels_follow_template_slots(data):
    for i, s in enumerate(data.source):
        template = TEMPLATES[data.templates_used["source", i]].split()
        entity_slots = [w[1:-1] for w in template if w[1:-1] in SMALL.entity_types]
        spans = sorted(extract_spans(s.labels))
        assert [sp.type for sp in spans] == entity_slots
        assert sum(t == "O" for t in s.labels) == len(template) - len(entity_slots)


def _context_words(d):
    names = set(d.source_language.stems)
    return [w for w in d.source_language.spelling if w not in names]


def _shape(word):
    return "".join("c" if ch in ONSETS else "v" if ch in VOWELS else ch
                   for ch in word.lower())


def test_full_overlap_shares_context_and_rewrites_names():
    d = generate(SynthConfig(stems_per_type=20, train_size=50, test_size=50, overlap=1.0))
    assert all(d.target_language.spelling[w] == w for w in _context_words(d))
    names = list(d.source_language.stems)
    rewritten = [d.target_language.spelling[n] for n in names]
    assert sum(a != b for a, b in zip(names, rewritten)) > 0.9 * len(names)
    # same syllable structure, so the two name sets are alike in distribution
    assert sorted(map(_shape, names)) == sorted(map(_shape, rewritten))
    assert all(r[0].isupper() for r in rewritten)


def _shared_fraction(overlap):
    d = generate(SynthConfig(stems_per_type=60, train_size=20, test_size=20, overlap=overlap))
    return np.mean([d.target_language.spelling[w] == w for w in _context_words(d)])


def test_overlap_controls_shared_fraction():
    fractions = [_shared_fraction(o) for o in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert fractions == sorted(fractions)
    assert fractions[-1] == 1.0
    assert fractions[0] < 0.4   # only numbers and cipher fixed points survive
    assert abs(fractions[2] - 0.5) < 0.15


def test_conll_round_trip(data):
    back = parse_conll(format_conll(data.target_test[:20]).splitlines())
    assert [(s.tokens, s.labels) for s in back] == [(s.tokens, s.labels)
                                                    for s in data.target_test[:20]]


@pytest.mark.parametrize("kwargs", [dict(train_size=0), dict(test_size=0),
                                    dict(target_train_size=-1), dict(overlap=1.5),
                                    dict(stems_per_type=1), dict(entity_types=("MISC",))])
def test_bad_configs(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


def test_inventory_too_small():
    with pytest.raises(ConfigError, match="inventory too small"):
        generate(SynthConfig(stems_per_type=2, templates=("{PER} left .",), train_size=10))
