"""Desk-scale code-switched corpora whose language signal lives in word suffixes."""
import logging
from dataclasses import dataclass, field, fields

import numpy as np
from decouple import Config, Csv, RepositoryEnv

from .data import Corpus, Sentence, Token
from .exceptions import ConfigurationError
from .schemes import LID_SCHEME, POS_SCHEME, Task, simplify

logger = logging.getLogger(__name__)

CONSONANTS = 'bcdfghjklmnprstvyz'
VOWELS = 'aeiou'
OTHER_TOKENS = ('.', ',', '!', '?', ':)', '...', '@user', '#tbt', 'http://t.co/x')

DEFAULT_POS_BY_SUFFIX = {
    'ing': 'VERB', 'ed': 'VERB', 'ly': 'ADV', 'ness': 'NOUN',
    'iye': 'VERB', 'ne': 'VERB', 'wala': 'NOUN', 'kar': 'ADV',
}
SPLIT_FRACTIONS = (('train', 0.70), ('dev', 0.15), ('test', 0.15))


def make_stems(count, rng, exclude=()):
    """Pronounceable CVCV(C) stems over one shared alphabet."""
    def pick(letters):
        return letters[rng.integers(len(letters))]

    stems, seen = [], set(exclude)
    while len(stems) < count:
        stem = ''.join(pick(CONSONANTS) + pick(VOWELS) for _ in range(int(rng.integers(2, 4))))
        if rng.random() < 0.5:
            stem += pick(CONSONANTS)
        if stem not in seen:
            seen.add(stem)
            stems.append(stem)
    return stems


@dataclass
class SyntheticSpec:
    lang1_stems: list = None
    lang2_stems: list = None
    lang1_suffixes: list = field(default_factory=lambda: ['ing', 'ed', 'ly', 'ness'])
    lang2_suffixes: list = field(default_factory=lambda: ['iye', 'ne', 'wala', 'kar'])
    stems_per_language: int = 50
    switch_prob: float = 0.3
    other_rate: float = 0.05
    ne_rate: float = 0.03
    min_len: int = 5
    max_len: int = 12
    sentences: int = 2000
    seed: int = 7
    task: Task = Task.LID
    pos_by_suffix: dict = field(default_factory=lambda: dict(DEFAULT_POS_BY_SUFFIX))

    def __post_init__(self):
        self.task = Task(self.task)
        if self.task is Task.NER:
            raise ConfigurationError('synthetic corpora cover the lid and pos tasks')
        if not self.lang1_suffixes or not self.lang2_suffixes:
            raise ConfigurationError('both suffix inventories must be non-empty')
        for a in self.lang1_suffixes:
            for b in self.lang2_suffixes:
                if a.endswith(b) or b.endswith(a):
                    raise ConfigurationError(f"suffixes {a!r} and {b!r} overlap across languages")
        if self.lang1_stems is not None and not self.lang1_stems or \
                self.lang2_stems is not None and not self.lang2_stems:
            raise ConfigurationError('stem inventories must be non-empty')
        if self.stems_per_language < 1:
            raise ConfigurationError('stems_per_language must be positive')
        for name in ('switch_prob', 'other_rate', 'ne_rate'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
        if self.other_rate + self.ne_rate > 1.0:
            raise ConfigurationError('other_rate + ne_rate must not exceed 1')
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError(f"bad sentence length range {self.min_len}..{self.max_len}")
        if self.sentences < 1:
            raise ConfigurationError('sentences must be positive')
        if self.task is Task.POS:
            missing = [s for s in self.lang1_suffixes + self.lang2_suffixes if s not in self.pos_by_suffix]
            if missing:
                raise ConfigurationError(f"no POS tag for suffixes {missing}")

    def inventories(self):
        rng = np.random.default_rng([self.seed, 0])
        lang1 = list(self.lang1_stems) if self.lang1_stems else make_stems(self.stems_per_language, rng)
        lang2 = list(self.lang2_stems) if self.lang2_stems else make_stems(self.stems_per_language, rng, exclude=lang1)
        return {
            'lang1': (lang1, list(self.lang1_suffixes)),
            'lang2': (lang2, list(self.lang2_suffixes)),
        }


SPEC_CASTS = {
    'lang1_stems': Csv(), 'lang2_stems': Csv(),
    'lang1_suffixes': Csv(), 'lang2_suffixes': Csv(),
    'stems_per_language': int, 'switch_prob': float, 'other_rate': float, 'ne_rate': float,
    'min_len': int, 'max_len': int, 'sentences': int, 'seed': int, 'task': str,
}


def spec_from_file(path):
    """``key=value`` lines naming any :class:`SyntheticSpec` field except ``pos_by_suffix``."""
    repository = RepositoryEnv(str(path))
    unknown = sorted(set(repository.data) - set(SPEC_CASTS))
    if unknown:
        raise ConfigurationError(f"unknown synthetic spec keys: {', '.join(unknown)}")
    source = Config(repository)
    values = {}
    for key in repository.data:
        try:
            values[key] = source(key, cast=SPEC_CASTS[key])
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from exc
    known = {f.name for f in fields(SyntheticSpec)}
    return SyntheticSpec(**{k: v for k, v in values.items() if k in known})


def _token(word, language, suffix, spec):
    if spec.task is Task.LID:
        return Token(word, language, simplify(language))
    return Token(word, spec.pos_by_suffix[suffix], language)


def _sentence(rng, spec, inventories):
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    language = 'lang1' if rng.random() < 0.5 else 'lang2'
    tokens = []
    for position in range(length):
        draw = rng.random()
        if draw < spec.other_rate:
            surface = OTHER_TOKENS[rng.integers(len(OTHER_TOKENS))]
            label = 'other' if spec.task is Task.LID else ('X' if surface[0] in '@#h' else '.')
            tokens.append(Token(surface, label, 'other'))
            continue
        if draw < spec.other_rate + spec.ne_rate:
            source = 'lang1' if rng.random() < 0.5 else 'lang2'
            stems = inventories[source][0]
            surface = stems[rng.integers(len(stems))].capitalize()
            label = 'ne' if spec.task is Task.LID else 'NOUN'
            tokens.append(Token(surface, label, 'other'))
            continue
        if position and rng.random() < spec.switch_prob:
            language = 'lang2' if language == 'lang1' else 'lang1'
        stems, suffixes = inventories[language]
        suffix = suffixes[rng.integers(len(suffixes))]
        word = stems[rng.integers(len(stems))] + suffix
        tokens.append(_token(word, language, suffix, spec))
    return Sentence(tokens)


def generate_synthetic(spec):
    """Deterministic corpus split 70/15/15 in generation order."""
    inventories = spec.inventories()
    rng = np.random.default_rng([spec.seed, 1])
    sentences = [_sentence(rng, spec, inventories) for _ in range(spec.sentences)]
    splits, start = {}, 0
    for i, (name, fraction) in enumerate(SPLIT_FRACTIONS):
        stop = len(sentences) if i == len(SPLIT_FRACTIONS) - 1 else start + int(round(fraction * len(sentences)))
        splits[name] = sentences[start:stop]
        start = stop
    scheme = LID_SCHEME if spec.task is Task.LID else POS_SCHEME
    logger.info("generated %d %s sentences (seed %s)", len(sentences), spec.task.value, spec.seed)
    return Corpus(spec.task, scheme, splits)


def expected_label_rates(spec):
    """Per-token probabilities of lang1 / lang2 / ne / other under the generator."""
    language = 1.0 - spec.other_rate - spec.ne_rate
    return {'lang1': language / 2, 'lang2': language / 2, 'ne': spec.ne_rate, 'other': spec.other_rate}


def spec_to_text(spec):
    """Resolved spec as sorted key=value lines, readable by :func:`spec_from_file`."""
    inventories = spec.inventories()
    values = {
        'lang1_stems': inventories['lang1'][0],
        'lang2_stems': inventories['lang2'][0],
        'lang1_suffixes': spec.lang1_suffixes,
        'lang2_suffixes': spec.lang2_suffixes,
        'stems_per_language': spec.stems_per_language,
        'switch_prob': spec.switch_prob,
        'other_rate': spec.other_rate,
        'ne_rate': spec.ne_rate,
        'min_len': spec.min_len,
        'max_len': spec.max_len,
        'sentences': spec.sentences,
        'seed': spec.seed,
        'task': spec.task.value,
    }
    lines = []
    for key in sorted(values):
        value = values[key]
        lines.append(f"{key}={','.join(value) if isinstance(value, list) else value}")
    return '\n'.join(lines) + '\n'
