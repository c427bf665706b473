"""End-to-end runs on synthetic corpora. Excluded from the quick suite with ``--exclude-tag slow``."""
import math

from django.test import SimpleTestCase, tag

from morphtag.encoder import EncoderConfig, PoolingMode, attention_position_profile
from morphtag.serialization import parameter_checksum
from morphtag.synthetic import SyntheticSpec, generate_synthetic
from morphtag.tagger import TaggerConfig, TaggerFlags, TaggerModel
from morphtag.train import (
    AdamConfig, TrainConfig, TransferMode, epochs_to_reach, evaluate, position_shuffle_analysis, train, transfer,
)

SEEDS = (1, 2, 3, 4, 5)


def small_config(pooling=PoolingMode.POS_HIER_ATTN, seed=7, **flags):
    encoder = EncoderConfig(
        char_emb_dim=8, orders=(1, 2, 3), channels={1: 8, 2: 8, 3: 16}, max_word_len=20,
        attention_dim=16, pooling_mode=pooling, token_dim=32,
    )
    return TaggerConfig(encoder=encoder, hidden_dim=16, flags=TaggerFlags(**flags), seed=seed)


def fit(corpus, epochs, pooling=PoolingMode.POS_HIER_ATTN, seed=7, target_accuracy=None, **flags):
    model = TaggerModel(small_config(pooling, seed, **flags), corpus.scheme, corpus.character_vocabulary())
    cfg = TrainConfig(epochs=epochs, batch_size=8, seed=seed, adam=AdamConfig(lr=0.005),
                      target_accuracy=target_accuracy)
    return train(model, corpus, cfg)


def reached(log, target):
    epoch = epochs_to_reach(log, target)
    return math.inf if epoch is None else epoch


@tag('slow')
class SyntheticLidTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus = generate_synthetic(SyntheticSpec())
        # 30-epoch budget with an early stop at 0.995 dev accuracy
        cls.result = fit(cls.corpus, epochs=30, target_accuracy=0.995, use_secondary=True)

    def test_held_out_accuracy(self):
        report = evaluate(self.result.model, self.corpus.split('test'))
        self.assertGreaterEqual(report['accuracy'], 0.95)

    def test_exported_weights_lie_on_the_simplex(self):
        for sentence in self.corpus.split('dev'):
            for trace in self.result.model.predict(sentence.surfaces).traces:
                self.assertAlmostEqual(sum(trace.hier_alphas), 1.0, places=9)
                for ngrams in trace.orders.values():
                    alphas = [alpha for _, _, alpha in ngrams]
                    self.assertTrue(all(alpha >= 0 for alpha in alphas))
                    self.assertAlmostEqual(sum(alphas), 1.0, places=9)

    def test_shuffling_positions_hurts(self):
        report = position_shuffle_analysis(self.result.model, self.corpus.split('test'), seed=0)
        self.assertEqual(report['target'], 'simplified')
        self.assertLess(report['shuffled_accuracy'], report['accuracy'])

    def test_attention_favours_the_suffix(self):
        suffixes = tuple(SyntheticSpec().lang1_suffixes + SyntheticSpec().lang2_suffixes)
        traces = [
            trace
            for sentence in self.corpus.split('test')
            for trace in self.result.model.predict(sentence.surfaces).traces
            if trace.word.endswith(suffixes)
        ]
        profile = attention_position_profile(traces)[3]
        self.assertGreater(profile['last'], profile['uniform'])


@tag('slow')
class AblationTests(SimpleTestCase):
    def test_pooling_ladder(self):
        corpus = generate_synthetic(SyntheticSpec(sentences=400))
        ordered = 0
        for seed in SEEDS:
            scores = [
                fit(corpus, epochs=8, pooling=mode, seed=seed).best_weighted_f1
                for mode in (PoolingMode.POS_HIER_ATTN, PoolingMode.POS_ATTN, PoolingMode.MAXPOOL)
            ]
            ordered += scores[0] >= scores[1] >= scores[2]
        self.assertGreaterEqual(ordered, 4)

    def test_shuffling_hurts_on_every_seed(self):
        corpus = generate_synthetic(SyntheticSpec(sentences=400))
        for seed in SEEDS:
            model = fit(corpus, epochs=8, seed=seed, use_secondary=True).model
            report = position_shuffle_analysis(model, corpus.split('dev'), seed=seed)
            self.assertLess(report['shuffled_accuracy'], report['accuracy'], seed)


@tag('slow')
class TransferTests(SimpleTestCase):
    target = 0.9

    def test_frozen_converges_first(self):
        lid = generate_synthetic(SyntheticSpec(sentences=600))
        pos = generate_synthetic(SyntheticSpec(sentences=600, task='pos'))
        pretrained = fit(lid, epochs=10).model.to_checkpoint()
        encoder_bytes = parameter_checksum(pretrained.state, 'encoder.')

        wins = 0
        for seed in SEEDS:
            epochs = {}
            for mode in (TransferMode.NONE, TransferMode.FROZEN):
                cfg = TrainConfig(epochs=15, batch_size=8, seed=seed, adam=AdamConfig(lr=0.005),
                                  target_accuracy=self.target)
                result = transfer(pretrained, pos, mode, cfg, small_config(seed=seed))
                epochs[mode] = reached(result.log, self.target)
                if mode is TransferMode.FROZEN:
                    self.assertEqual(parameter_checksum(result.model.state_dict(), 'encoder.'), encoder_bytes)
            wins += epochs[TransferMode.FROZEN] < epochs[TransferMode.NONE]
        self.assertGreaterEqual(wins, 3)
