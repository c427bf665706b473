"""Token-level F1 family, entity F1 over BIO spans, and code-mixing indices."""
from collections import Counter

import numpy as np
from sklearn.metrics import precision_recall_fscore_support

from .exceptions import InputError

LANGUAGE_LABELS = ('lang1', 'lang2')


def _aligned(gold, pred):
    gold, pred = list(gold), list(pred)
    if len(gold) != len(pred):
        raise InputError(f"{len(gold)} gold labels but {len(pred)} predictions")
    return gold, pred


def _label_set(gold, pred, labels):
    if labels is not None:
        return list(labels)
    return sorted(set(gold) | set(pred))


def per_label_f1(gold, pred, labels=None):
    gold, pred = _aligned(gold, pred)
    labels = _label_set(gold, pred, labels)
    if not gold or not labels:
        return {label: 0.0 for label in labels}
    _, _, f1, _ = precision_recall_fscore_support(
        gold, pred, labels=labels, average=None, zero_division=0)
    return {label: float(score) for label, score in zip(labels, f1)}


def label_support(gold, labels=None):
    counts = Counter(gold)
    labels = sorted(counts) if labels is None else labels
    return {label: counts.get(label, 0) for label in labels}


def weighted_f1(gold, pred, labels=None):
    """Per-label F1 averaged with gold support as weights.

    Labels absent from the gold sequence carry zero weight.
    """
    gold, pred = _aligned(gold, pred)
    scores = per_label_f1(gold, pred, labels)
    support = label_support(gold, list(scores))
    total = sum(support.values())
    if not total:
        return 0.0
    return sum(scores[label] * support[label] for label in scores) / total


def wa_f1(lang1_f1, lang2_f1, supports):
    n1, n2 = supports
    if n1 + n2 == 0:
        return 0.0
    return (lang1_f1 * n1 + lang2_f1 * n2) / (n1 + n2)


def wa_f1_from_labels(gold, pred):
    gold, pred = _aligned(gold, pred)
    scores = per_label_f1(gold, pred, LANGUAGE_LABELS)
    support = label_support(gold, LANGUAGE_LABELS)
    return wa_f1(scores['lang1'], scores['lang2'], (support['lang1'], support['lang2']))


def accuracy(gold, pred):
    gold, pred = _aligned(gold, pred)
    if not gold:
        return 0.0
    return float(np.mean([g == p for g, p in zip(gold, pred)]))


# =====================================================
# Entity spans
# =====================================================

def bio_spans(labels):
    """Exact ``(type, start, end)`` spans; an orphan ``I-X`` opens a new span."""
    spans = []
    current = None
    for i, label in enumerate(list(labels) + ['O']):
        prefix, _, kind = label.partition('-')
        continues = prefix == 'I' and current is not None and current[0] == kind
        if current is not None and not continues:
            spans.append((current[0], current[1], i))
            current = None
        if prefix == 'B' or (prefix == 'I' and not continues):
            current = (kind, i)
    return spans


def entity_f1(gold_sequences, pred_sequences):
    """Micro precision, recall and F1 over exact entity spans."""
    gold_sequences, pred_sequences = list(gold_sequences), list(pred_sequences)
    if len(gold_sequences) != len(pred_sequences):
        raise InputError(f"{len(gold_sequences)} gold sentences but {len(pred_sequences)} predicted")
    n_gold = n_pred = n_correct = 0
    for gold, pred in zip(gold_sequences, pred_sequences):
        gold, pred = _aligned(gold, pred)
        gold_spans, pred_spans = set(bio_spans(gold)), set(bio_spans(pred))
        n_gold += len(gold_spans)
        n_pred += len(pred_spans)
        n_correct += len(gold_spans & pred_spans)
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {'precision': precision, 'recall': recall, 'f1': f1}


# =====================================================
# Code-mixing
# =====================================================

def compute_cmi(labels):
    """Code-Mixed Index of one utterance on a 0-100 scale.

    Anything other than lang1/lang2 counts as language-independent.
    """
    labels = list(labels)
    if not labels:
        raise InputError('CMI of an empty utterance is undefined')
    counts = Counter(label for label in labels if label in LANGUAGE_LABELS)
    n = len(labels)
    u = n - sum(counts.values())
    if n == u:
        return 0.0
    dominant = counts.most_common(1)[0][1]
    return 100.0 * (1.0 - dominant / (n - u))


def is_code_switched(labels):
    present = set(labels)
    return all(language in present for language in LANGUAGE_LABELS)


def switch_points(labels):
    """Language changes between consecutive language tokens, skipping the rest."""
    languages = [label for label in labels if label in LANGUAGE_LABELS]
    return sum(1 for a, b in zip(languages, languages[1:]) if a != b)


def cmi_aggregates(utterances):
    utterances = [list(u) for u in utterances if u]
    values = [compute_cmi(u) for u in utterances]
    mixed = [value for value, u in zip(values, utterances) if is_code_switched(u)]
    return {
        'utterances': len(utterances),
        'code_switched': len(mixed),
        'cmi_all': float(np.mean(values)) if values else 0.0,
        'cmi_mixed': float(np.mean(mixed)) if mixed else 0.0,
        'switch_points': sum(switch_points(u) for u in utterances),
    }
