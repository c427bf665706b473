"""Label inventories for the three tasks and the simplified LID mapping."""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

from .exceptions import ParseError, SchemeError


class Task(str, Enum):
    LID = 'lid'
    POS = 'pos'
    NER = 'ner'


CALCS_LABELS = ('lang1', 'lang2', 'ne', 'mixed', 'ambiguous', 'fw', 'other', 'unk')
SIMPLIFIED_LABELS = ('lang1', 'lang2', 'other')

UNIVERSAL_POS = ('NOUN', 'VERB', 'ADJ', 'ADV', 'PRON', 'DET', 'ADP', 'NUM', 'CONJ', 'PRT', '.', 'X')
CS_POS_LABELS = UNIVERSAL_POS + ('PART_NEG', 'PRON_WH')

NER_TYPES = ('person', 'location', 'organization', 'group', 'title', 'product', 'event', 'time', 'other')


def simplify(label):
    """Collapse a CALCS label onto lang1 / lang2 / other."""
    if label not in CALCS_LABELS:
        raise SchemeError(f"{label!r} is not a CALCS LID label")
    return label if label in ('lang1', 'lang2') else 'other'


def bio_labels(types):
    labels = ['O']
    for entity_type in types:
        labels.extend([f"B-{entity_type}", f"I-{entity_type}"])
    return tuple(labels)


@dataclass(frozen=True)
class LabelScheme:
    task: Task
    labels: tuple
    simplified_map: dict = field(default=None, compare=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise SchemeError(f"duplicate labels in {self.task.value} scheme")

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self._positions

    @cached_property
    def _positions(self):
        return {label: i for i, label in enumerate(self.labels)}

    def index(self, label):
        try:
            return self._positions[label]
        except KeyError:
            raise SchemeError(f"unknown {self.task.value} label {label!r}") from None

    def validate(self, label):
        if label not in self:
            raise SchemeError(f"unknown {self.task.value} label {label!r}; valid: {', '.join(self.labels)}")
        return label

    def to_dict(self):
        return {'task': self.task.value, 'labels': list(self.labels)}

    @classmethod
    def from_dict(cls, payload):
        task = Task(payload['task'])
        labels = tuple(payload['labels'])
        return cls(task, labels, simplified_map=_simplified_for(task, labels))

    @classmethod
    def from_file(cls, path, task):
        """One label per line; blank lines and ``#`` comments are ignored."""
        labels = []
        for number, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if any(ch.isspace() for ch in line):
                raise ParseError(f"label {line!r} contains whitespace", number)
            labels.append(line)
        task = Task(task)
        return cls(task, tuple(labels), simplified_map=_simplified_for(task, labels))


def _simplified_for(task, labels):
    if task is Task.LID and set(labels) <= set(CALCS_LABELS):
        return {label: simplify(label) for label in labels}
    return None


LID_SCHEME = LabelScheme(Task.LID, CALCS_LABELS, {label: simplify(label) for label in CALCS_LABELS})
SIMPLIFIED_SCHEME = LabelScheme(Task.LID, SIMPLIFIED_LABELS)
POS_SCHEME = LabelScheme(Task.POS, CS_POS_LABELS)
NER_SCHEME = LabelScheme(Task.NER, bio_labels(NER_TYPES))

DEFAULT_SCHEMES = {Task.LID: LID_SCHEME, Task.POS: POS_SCHEME, Task.NER: NER_SCHEME}


def scheme_for(task):
    return DEFAULT_SCHEMES[Task(task)]
