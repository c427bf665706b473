"""Corpus types, the CoNLL reader/writer, BIO checks, static embedding tables and corpus statistics."""
import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import KFold

from .encoder import CharVocabulary
from .exceptions import InputError, ParseError, SchemeError
from .metrics import cmi_aggregates, is_code_switched
from .schemes import SIMPLIFIED_LABELS, Task

logger = logging.getLogger(__name__)

SPLITS = ('train', 'dev', 'test')
CONLL_SUFFIX = '.conll'


@dataclass(frozen=True)
class Token:
    surface: str
    label: str
    simplified: str = None

    def __post_init__(self):
        if not self.surface:
            raise InputError('token surface must be non-empty')


@dataclass
class Sentence:
    tokens: list

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    @property
    def surfaces(self):
        return [token.surface for token in self.tokens]

    @property
    def labels(self):
        return [token.label for token in self.tokens]

    @property
    def simplified(self):
        return [token.simplified for token in self.tokens]


@dataclass
class Corpus:
    task: Task
    scheme: object
    splits: dict = field(default_factory=dict)

    def split(self, name):
        try:
            sentences = self.splits[name]
        except KeyError:
            raise InputError(f"corpus has no {name!r} split") from None
        return sentences

    def require(self, *names):
        for name in names:
            if not self.split(name):
                raise InputError(f"the {name!r} split is empty")

    def sentences(self):
        for sentences in self.splits.values():
            yield from sentences

    def token_count(self, name=None):
        sentences = self.sentences() if name is None else self.split(name)
        return sum(len(s) for s in sentences)

    def character_vocabulary(self):
        return CharVocabulary.from_words(token.surface for sentence in self.sentences() for token in sentence)

    @classmethod
    def from_directory(cls, directory, scheme):
        """Reads ``train.conll``, ``dev.conll`` and ``test.conll``, whichever exist."""
        directory = Path(directory)
        splits = {}
        for name in SPLITS:
            path = directory / f"{name}{CONLL_SUFFIX}"
            if path.exists():
                splits[name] = parse_conll(path, scheme)
        if not splits:
            raise InputError(f"no {'/'.join(SPLITS)}{CONLL_SUFFIX} files in {directory}")
        return cls(scheme.task, scheme, splits)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, sentences in self.splits.items():
            path = directory / f"{name}{CONLL_SUFFIX}"
            path.write_text(serialize_conll(sentences, self.scheme), encoding='utf-8')
            paths.append(path)
        return paths


# =====================================================
# CoNLL
# =====================================================

def _fields(raw, number):
    fields = [part.strip() for part in raw.split('\t')]
    if len(fields) not in (2, 3) or not all(fields):
        raise ParseError(f"expected 'token<TAB>label[<TAB>simplified]', got {raw!r}", number)
    return fields


def _is_separator(raw):
    return not raw.strip()


def _redundant_simplified(label, simplified, scheme):
    mapping = getattr(scheme, 'simplified_map', None) or {}
    return simplified is None or mapping.get(label) == simplified


def parse_conll_text(text, scheme):
    sentences, tokens = [], []
    mapping = scheme.simplified_map or {}
    for number, raw in enumerate(text.splitlines(), 1):
        if raw.startswith('-DOCSTART-'):
            continue
        if _is_separator(raw):
            if tokens:
                sentences.append(Sentence(tokens))
                tokens = []
            continue
        fields = _fields(raw, number)
        surface, label = fields[0], fields[1]
        if label not in scheme:
            raise SchemeError(f"line {number}: unknown {scheme.task.value} label {label!r}")
        if len(fields) == 3:
            simplified = fields[2]
            if simplified not in SIMPLIFIED_LABELS:
                raise SchemeError(f"line {number}: {simplified!r} is not a simplified LID label")
        else:
            simplified = mapping.get(label)
        tokens.append(Token(surface, label, simplified))
    if tokens:
        sentences.append(Sentence(tokens))
    return sentences


def parse_conll(path, scheme):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8 ({exc.reason})") from exc
    sentences = parse_conll_text(text, scheme)
    logger.debug("%s: %d sentences", path, len(sentences))
    return sentences


def serialize_conll(sentences, scheme=None):
    """Token lines, one blank line after every sentence.

    The simplified column is written only where the scheme could not
    derive it from the primary label.
    """
    lines = []
    for sentence in sentences:
        for token in sentence:
            columns = [token.surface, token.label]
            if not _redundant_simplified(token.label, token.simplified, scheme):
                columns.append(token.simplified)
            lines.append('\t'.join(columns))
        lines.append('')
    return ''.join(line + '\n' for line in lines)


def normalize_conll_text(text, scheme=None):
    """Canonical form of a CoNLL file: stripped fields, no ``-DOCSTART-``,
    single blank lines between sentences and after the last one."""
    lines, open_sentence = [], False
    for number, raw in enumerate(text.splitlines(), 1):
        if raw.startswith('-DOCSTART-'):
            continue
        if _is_separator(raw):
            if open_sentence:
                lines.append('')
                open_sentence = False
            continue
        fields = _fields(raw, number)
        if len(fields) == 3 and _redundant_simplified(fields[1], fields[2], scheme):
            fields = fields[:2]
        lines.append('\t'.join(fields))
        open_sentence = True
    if open_sentence:
        lines.append('')
    return ''.join(line + '\n' for line in lines)


# =====================================================
# BIO
# =====================================================

def bio_violations(labels):
    """Indices of ``I-X`` tags not preceded by ``B-X`` or ``I-X``."""
    bad = []
    previous = 'O'
    for i, label in enumerate(labels):
        if label.startswith('I-'):
            kind = label[2:]
            if previous not in (f"B-{kind}", f"I-{kind}"):
                bad.append(i)
        previous = label
    return bad


def repair_bio(labels):
    labels = list(labels)
    for i in bio_violations(labels):
        labels[i] = 'B-' + labels[i][2:]
    return labels


def check_bio(sentences, repair=False):
    """Counts BIO violations; with ``repair`` returns sentences whose orphan ``I-X`` became ``B-X``."""
    violations = 0
    fixed = []
    for sentence in sentences:
        bad = bio_violations(sentence.labels)
        violations += len(bad)
        if repair and bad:
            labels = repair_bio(sentence.labels)
            sentence = Sentence([Token(t.surface, label, t.simplified) for t, label in zip(sentence, labels)])
        fixed.append(sentence)
    if violations:
        logger.warning("%d BIO violations%s", violations, ' repaired' if repair else '')
    return fixed, violations


# =====================================================
# Static embeddings
# =====================================================

@dataclass
class EmbeddingTable:
    dim: int
    entries: dict = field(default_factory=dict)
    duplicates: int = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self.entries

    def lookup(self, word):
        return self.entries.get(word)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable) or self.dim != other.dim or self.entries.keys() != other.entries.keys():
            return False
        return all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items())


def _is_header(parts, following):
    """``count dim`` only counts as a header when the next line carries ``dim`` values."""
    if len(parts) != 2 or not all(part.isdigit() for part in parts):
        return False
    return following is not None and len(following) == int(parts[1]) + 1


def _vector_lines(fh):
    for number, raw in enumerate(fh, 1):
        parts = raw.rstrip('\n').rstrip().split(' ')
        if parts and parts[0]:
            yield number, parts


def load_embeddings(path):
    """Text vectors, ``word v1 ... vd`` per line; a fastText ``count dim`` header is skipped."""
    path = Path(path)
    dim = None
    entries = {}
    duplicates = 0
    with path.open(encoding='utf-8') as fh:
        lines = _vector_lines(fh)
        head = [line for line in (next(lines, None), next(lines, None)) if line is not None]
        if head and head[0][0] == 1 and _is_header(head[0][1], head[1][1] if len(head) > 1 else None):
            dim = int(head[0][1][1])
            head = head[1:]
        for number, parts in itertools.chain(head, lines):
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise ParseError(f"vector for {word!r} has {len(values)} values, expected {dim}", number)
            try:
                vector = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"non-numeric value in vector for {word!r}", number) from exc
            if word in entries:
                duplicates += 1
            entries[word] = vector
    if dim is None:
        raise ParseError(f"{path} holds no vectors")
    if duplicates:
        logger.warning("%s: %d duplicate words, last occurrence kept", path, duplicates)
    return EmbeddingTable(dim=dim, entries=entries, duplicates=duplicates)


def save_embeddings(table, path):
    path = Path(path)
    with path.open('w', encoding='utf-8') as fh:
        for word, vector in table.entries.items():
            fh.write(word + ' ' + ' '.join(repr(float(v)) for v in vector) + '\n')
    return path


# =====================================================
# Statistics and splitting
# =====================================================

UTTERANCE_CLASSES = ('code_switched', 'lang1_only', 'lang2_only', 'other_only')


def utterance_class(simplified):
    if is_code_switched(simplified):
        return 'code_switched'
    present = set(simplified)
    if 'lang1' in present:
        return 'lang1_only'
    if 'lang2' in present:
        return 'lang2_only'
    return 'other_only'


def split_stats(sentences):
    labels = Counter(label for sentence in sentences for label in sentence.labels)
    report = {
        'sentences': len(sentences),
        'tokens': sum(len(s) for s in sentences),
        'labels': dict(sorted(labels.items())),
    }
    tracked = [s.simplified for s in sentences if all(label is not None for label in s.simplified)]
    if tracked:
        classes = Counter(utterance_class(simplified) for simplified in tracked)
        report['utterances'] = {name: classes.get(name, 0) for name in UTTERANCE_CLASSES}
        report['cmi'] = cmi_aggregates(tracked)
    return report


def dataset_stats(corpus):
    report = {'task': corpus.task.value, 'splits': {}}
    for name, sentences in corpus.splits.items():
        report['splits'][name] = split_stats(sentences)
    report['total'] = split_stats(list(corpus.sentences()))
    return report


def kfold_splits(sentences, k, seed):
    """Deterministic ``(train, test)`` sentence lists for each of ``k`` folds."""
    sentences = list(sentences)
    if k < 2 or k > len(sentences):
        raise InputError(f"cannot make {k} folds from {len(sentences)} sentences")
    folds = KFold(n_splits=k, shuffle=True, random_state=seed)
    return [
        ([sentences[i] for i in train], [sentences[i] for i in test])
        for train, test in folds.split(np.arange(len(sentences)))
    ]


def read_token_file(path):
    """Word lists from a token-per-line file; only the first TAB column is read."""
    sentences, words = [], []
    for raw in Path(path).read_text(encoding='utf-8').splitlines():
        if raw.startswith('-DOCSTART-'):
            continue
        if _is_separator(raw):
            if words:
                sentences.append(words)
                words = []
            continue
        words.append(raw.split('\t')[0].strip())
    if words:
        sentences.append(words)
    return sentences
