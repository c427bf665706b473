from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from morphtag.exceptions import InputError
from morphtag.metrics import (
    accuracy, bio_spans, cmi_aggregates, compute_cmi, entity_f1, is_code_switched, per_label_f1, switch_points,
    wa_f1, wa_f1_from_labels, weighted_f1,
)


def confusion_f1(gold, pred, label):
    tp = sum(1 for g, p in zip(gold, pred) if g == label and p == label)
    fp = sum(1 for g, p in zip(gold, pred) if g != label and p == label)
    fn = sum(1 for g, p in zip(gold, pred) if g == label and p != label)
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def confusion_weighted_f1(gold, pred):
    support = Counter(gold)
    return sum(confusion_f1(gold, pred, label) * n for label, n in support.items()) / len(gold)


class F1Tests(SimpleTestCase):
    def test_hand_case(self):
        gold, pred = ['A', 'A', 'B', 'B'], ['A', 'B', 'B', 'B']
        scores = per_label_f1(gold, pred)
        self.assertAlmostEqual(scores['A'], 2 / 3)
        self.assertAlmostEqual(scores['B'], 0.8)
        self.assertAlmostEqual(weighted_f1(gold, pred), 0.7333333333333333)

    def test_matches_confusion_oracle(self):
        rng = np.random.default_rng(0)
        labels = ['lang1', 'lang2', 'other', 'ne']
        for _ in range(100):
            n = int(rng.integers(1, 12))
            gold = [labels[i] for i in rng.integers(len(labels), size=n)]
            pred = [labels[i] for i in rng.integers(len(labels), size=n)]
            self.assertAlmostEqual(weighted_f1(gold, pred, labels), confusion_weighted_f1(gold, pred), places=12)
            n1, n2 = gold.count('lang1'), gold.count('lang2')
            expected = 0.0 if n1 + n2 == 0 else (
                confusion_f1(gold, pred, 'lang1') * n1 + confusion_f1(gold, pred, 'lang2') * n2) / (n1 + n2)
            self.assertAlmostEqual(wa_f1_from_labels(gold, pred), expected, places=12)

    def test_gold_against_itself(self):
        gold = ['lang1', 'lang2', 'other', 'lang1']
        self.assertEqual(weighted_f1(gold, gold), 1.0)
        self.assertEqual(accuracy(gold, gold), 1.0)
        self.assertEqual(wa_f1_from_labels(gold, gold), 1.0)

    def test_wa_f1_weights(self):
        self.assertAlmostEqual(wa_f1(1.0, 0.5, (3, 1)), 0.875)
        self.assertEqual(wa_f1(1.0, 1.0, (0, 0)), 0.0)

    def test_length_mismatch(self):
        with self.assertRaises(InputError):
            weighted_f1(['A'], ['A', 'B'])


class EntityTests(SimpleTestCase):
    def test_spans(self):
        labels = ['B-person', 'I-person', 'O', 'I-location', 'B-location', 'I-location']
        self.assertEqual(bio_spans(labels), [('person', 0, 2), ('location', 3, 4), ('location', 4, 6)])

    def test_exact_match_only(self):
        gold = [['B-person', 'I-person', 'O', 'B-time']]
        pred = [['B-person', 'O', 'O', 'B-time']]
        report = entity_f1(gold, pred)
        self.assertAlmostEqual(report['precision'], 0.5)
        self.assertAlmostEqual(report['recall'], 0.5)
        self.assertAlmostEqual(report['f1'], 0.5)

    def test_no_entities(self):
        self.assertEqual(entity_f1([['O']], [['O']]), {'precision': 0.0, 'recall': 0.0, 'f1': 0.0})


class CodeMixingTests(SimpleTestCase):
    def test_hand_cases(self):
        self.assertEqual(compute_cmi(['lang1'] * 5), 0.0)
        self.assertAlmostEqual(compute_cmi(['lang1'] * 4 + ['lang2'] * 2), 100 * (1 - 4 / 6))
        self.assertAlmostEqual(round(compute_cmi(['lang1'] * 4 + ['lang2'] * 2), 2), 33.33)
        self.assertEqual(compute_cmi(['other', 'ne']), 0.0)

    def test_other_tokens_leave_the_denominator(self):
        self.assertAlmostEqual(compute_cmi(['lang1', 'lang2', 'other', 'other']), 50.0)

    def test_empty_utterance(self):
        with self.assertRaises(InputError):
            compute_cmi([])

    def test_switch_points(self):
        self.assertEqual(switch_points(['lang1', 'other', 'lang2', 'lang2', 'lang1']), 2)
        self.assertTrue(is_code_switched(['lang2', 'lang1']))
        self.assertFalse(is_code_switched(['lang2', 'other']))

    def test_aggregates(self):
        report = cmi_aggregates([['lang1', 'lang1'], ['lang1', 'lang2'], []])
        self.assertEqual(report['utterances'], 2)
        self.assertEqual(report['code_switched'], 1)
        self.assertAlmostEqual(report['cmi_all'], 25.0)
        self.assertAlmostEqual(report['cmi_mixed'], 50.0)
        self.assertEqual(report['switch_points'], 1)
