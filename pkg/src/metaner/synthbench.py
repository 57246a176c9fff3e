"""Paired synthetic source/target languages for desk-scale cross-lingual NER.

Both languages fill the same sentence templates from the same entity stems.
Entity names are always rewritten in the target language by a seeded letter
cipher, so every target mention is unseen in the source. The cipher maps
consonants to consonants and vowels to vowels, so rewritten names follow the
same distribution as the originals. A context word stays verbatim with
probability ``overlap`` and otherwise gains a language-specific ending, so it
still shares its leading pieces with the source word. Overlap 1.0 leaves the
languages identical in distribution. Entities are capitalized syllable
strings with no type cue in their spelling, so their type has to be read off
the context.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sentence
from .errors import ConfigError

TEMPLATES = (
    "{PER} was selected to replace {PER} at the head of {ORG} .",
    "{LOC} , {NUM} {MONTH} ( {ORG} ) .",
    "press digest - {LOC} - {MONTH} {NUM} .",
    "`` we will try to win faster , '' said {PER} , who plays for {ORG} .",
    "{PER} said the {NOUN} in {LOC} was {ADJ} .",
    "{ORG} shares rose {NUM} percent in {LOC} on {DAY} .",
    "the {ADJ} {NOUN} of {ORG} met {PER} in {LOC} .",
    "{PER} ( {LOC} ) beat {PER} ( {LOC} ) {NUM} - {NUM} .",
    "police in {LOC} arrested {NUM} people on {DAY} .",
    "{PER} , chairman of {ORG} , told reporters on {DAY} .",
    "{ORG} said on {DAY} it would {VERB} the {NOUN} .",
    "{PER} will {VERB} {LOC} next {MONTH} .",
    "the {NOUN} was {VERB} by {ORG} in {LOC} .",
    "{LOC} and {LOC} signed a {NOUN} on {DAY} .",
    "{PER} scored for {ORG} against {ORG} .",
    "a spokesman for {ORG} in {LOC} declined to comment .",
    "{NUM} {NOUN} were reported near {LOC} .",
    "{PER} , {NUM} , joined {ORG} from {ORG} .",
    "the {NOUN} {VERB} {ADJ} on {DAY} .",
    "prices were {ADJ} in {MONTH} , the {NOUN} said .",
    "{PER} told {PER} that the {NOUN} was {ADJ} .",
    "flights from {LOC} to {LOC} were cancelled on {DAY} .",
)

FILLERS = {
    "NUM": tuple(str(n) for n in range(1, 32)),
    "MONTH": ("january", "february", "march", "april", "may", "june", "july",
              "august", "september", "october", "november", "december"),
    "DAY": ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"),
    "NOUN": ("report", "market", "plan", "deal", "team", "government", "match",
             "company", "price", "vote", "budget", "meeting", "season", "bank", "league"),
    "VERB": ("review", "visit", "approve", "reject", "announce", "support", "sell",
             "leave", "open", "delay"),
    "ADJ": ("strong", "weak", "stable", "higher", "lower", "unclear", "official",
            "final", "early", "quiet"),
}

# how many tokens an entity of each type spans, with weights
SPAN_LENGTHS = {"PER": ((1, 0.5), (2, 0.5)), "LOC": ((1, 0.85), (2, 0.15)),
                "ORG": ((1, 0.6), (2, 0.3), (3, 0.1))}
ONSETS = "bcdfghjklmnprstvz"
SUFFIXES = ("et", "um", "ak", "ir", "os")
VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    entity_types: tuple = ("PER", "LOC", "ORG")
    stems_per_type: int = 300
    templates: tuple = TEMPLATES
    train_size: int = 2000
    test_size: int = 500
    target_train_size: int = 0
    overlap: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.train_size, self.test_size) < 1 or self.target_train_size < 0:
            raise ConfigError("corpus sizes must be >= 1")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError("overlap must lie in [0, 1]")
        if self.stems_per_type < 2:
            raise ConfigError("need at least 2 stems per entity type")
        unknown = {t for t in self.entity_types if t not in SPAN_LENGTHS}
        if unknown:
            raise ConfigError(f"no span model for entity types {sorted(unknown)}")


@dataclass
class Language:
    """Surface forms of one language: word type -> spelling."""
    name: str
    spelling: dict = field(default_factory=dict)
    stems: dict = field(default_factory=dict)   # entity surface -> (stem, type)


@dataclass
class SynthData:
    source: list
    target_test: list
    target_train: list
    source_language: Language
    target_language: Language
    templates_used: dict   # (split, sentence id) -> template index


def _stable_unit(*parts):
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "little") / 2 ** 64


def _cipher(seed):
    rng = np.random.default_rng((seed, 0x63697068))
    table = {}
    for letters in (ONSETS, VOWELS):
        perm = rng.permutation(len(letters))
        for a, b in zip(letters, perm):
            table[a] = letters[b]
    for a in "qwxy":
        table.setdefault(a, a)
    return table


def _transform(word, table):
    out = []
    for ch in word:
        low = ch.lower()
        sub = table.get(low, low)
        out.append(sub.upper() if ch.isupper() else sub)
    return "".join(out)


def _inflect(word, seed):
    # keeps the word's own pieces and adds a language-specific ending
    return word + SUFFIXES[int(_stable_unit(seed, "suffix", word) * len(SUFFIXES))]


def _stem_inventory(cfg, rng):
    seen = set()
    stems = {}
    for t in cfg.entity_types:
        items = []
        while len(items) < cfg.stems_per_type:
            n = rng.integers(2, 4)
            s = "".join(ONSETS[rng.integers(len(ONSETS))] + VOWELS[rng.integers(len(VOWELS))]
                        for _ in range(n))
            if rng.random() < 0.4:
                s += ONSETS[rng.integers(len(ONSETS))]
            s = s.capitalize()
            if s not in seen:
                seen.add(s)
                items.append(s)
        stems[t] = items
    return stems


def _languages(cfg, stems):
    src, tgt = Language("source"), Language("target")
    table = _cipher(cfg.seed)
    words = {w for tpl in cfg.templates for w in tpl.split() if not w.startswith("{")}
    words |= {w for fill in FILLERS.values() for w in fill}
    for w in sorted(words):
        src.spelling[w] = w
        shared = _stable_unit(cfg.seed, "ctx", w) < cfg.overlap
        tgt.spelling[w] = w if shared or not w.isalpha() else _inflect(w, cfg.seed)
    for t, items in stems.items():
        for s in items:
            src.spelling[s] = s
            surface = _transform(s, table)
            tgt.spelling[s] = surface
            src.stems[s] = (s, t)
            tgt.stems[surface] = (s, t)
    return src, tgt


def _fill(template, cfg, stems, rng):
    tokens, labels = [], []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            slot = piece[1:-1]
            if slot in stems:
                lengths, weights = zip(*SPAN_LENGTHS[slot])
                n = lengths[rng.choice(len(lengths), p=np.array(weights) / sum(weights))]
                for j in range(n):
                    tokens.append(stems[slot][rng.integers(len(stems[slot]))])
                    labels.append(("B-" if j == 0 else "I-") + slot)
            elif slot in FILLERS:
                tokens.append(FILLERS[slot][rng.integers(len(FILLERS[slot]))])
                labels.append("O")
            else:
                raise ConfigError(f"template slot {slot!r} is not an entity type or filler")
        else:
            tokens.append(piece)
            labels.append("O")
    return tokens, labels


def _split(cfg, stems, lang, size, rng, tag, used):
    templates = [t for t in cfg.templates
                 if all(s[1:-1] in FILLERS or s[1:-1] in cfg.entity_types
                        for s in t.split() if s.startswith("{"))]
    if not templates:
        raise ConfigError("no template fits the configured entity types")
    out, seen = [], set()
    attempts = 0
    while len(out) < size:
        attempts += 1
        if attempts > 50 * size + 1000:
            raise ConfigError(f"inventory too small for {size} distinct {tag} sentences")
        k = int(rng.integers(len(templates)))
        tokens, labels = _fill(templates[k], cfg, stems, rng)
        surface = tuple(lang.spelling[w] for w in tokens)
        if surface in seen:
            continue
        seen.add(surface)
        used[tag, len(out)] = cfg.templates.index(templates[k])
        out.append(Sentence(surface, tuple(labels), len(out)))
    return out


def generate(cfg):
    """Source train corpus, target test corpus and optional target train subset."""
    rng = np.random.default_rng((cfg.seed, 0x73796E74))
    stems = _stem_inventory(cfg, rng)
    src, tgt = _languages(cfg, stems)
    used = {}
    source = _split(cfg, stems, src, cfg.train_size, rng, "source", used)
    test = _split(cfg, stems, tgt, cfg.test_size, rng, "target_test", used)
    train = []
    if cfg.target_train_size:
        train = _split(cfg, stems, tgt, cfg.target_train_size, rng, "target_train", used)
    return SynthData(source, test, train, src, tgt, used)
