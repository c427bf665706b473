import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from morphtag.data import EmbeddingTable
from morphtag.encoder import EncoderConfig, PoolingMode
from morphtag.exceptions import ConfigurationError, DimensionError, InputError, LoadError, NumericalError
from morphtag.numerics import Module, Tensor
from morphtag.serialization import parameter_checksum
from morphtag.synthetic import SyntheticSpec, generate_synthetic
from morphtag.tagger import TaggerConfig, TaggerFlags, TaggerModel
from morphtag.train import (
    GROUPS, AdamConfig, AdamState, FinetuneSchedule, LossConfig, PlateauScheduler, STLRConfig, TrainConfig,
    TransferMode, adam_step, build_transfer_model, epochs_to_reach, evaluate, gradual_unfreeze,
    position_shuffle_analysis, regularized_parameters, stlr, total_loss, train, transfer,
)


def tiny_config(pooling=PoolingMode.POS_HIER_ATTN, seed=3, **flags):
    encoder = EncoderConfig(
        char_emb_dim=4, orders=(1, 2, 3), channels={1: 3, 2: 3, 3: 4}, max_word_len=12,
        attention_dim=5, pooling_mode=pooling, token_dim=6,
    )
    return TaggerConfig(encoder=encoder, hidden_dim=4, flags=TaggerFlags(**flags), seed=seed)


def tiny_corpus(task='lid', sentences=20, seed=7):
    return generate_synthetic(SyntheticSpec(
        sentences=sentences, min_len=3, max_len=5, stems_per_language=5, seed=seed, task=task))


def tiny_model(corpus, **flags):
    return TaggerModel(tiny_config(**flags), corpus.scheme, corpus.character_vocabulary())


def quick_config(**overrides):
    values = dict(epochs=2, batch_size=4, seed=1, adam=AdamConfig(lr=0.01), scheduler='constant')
    values.update(overrides)
    return TrainConfig(**values)


def grouped_module(groups):
    module = Module()
    for group in groups:
        module.add_parameter(group, np.ones(2), group)
    module.assign_names()
    return module


class TotalLossTests(SimpleTestCase):
    def test_hand_computed_composition(self):
        cfg = LossConfig(beta=0.2, l2=0.01)
        loss = total_loss(1.5, 0.8, [Tensor(np.ones(4))], cfg)
        self.assertAlmostEqual(loss.item(), 1.70, delta=1e-12)

    def test_random_components(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            primary, secondary = rng.uniform(0, 3, size=2)
            beta, l2 = rng.uniform(0, 1, size=2)
            weights = [rng.normal(size=(2, 3)), rng.normal(size=4)]
            expected = primary + beta * secondary + l2 * sum(float((w * w).sum()) for w in weights)
            loss = total_loss(primary, secondary, [Tensor(w) for w in weights], LossConfig(beta=beta, l2=l2))
            self.assertAlmostEqual(loss.item(), expected, delta=1e-12)

    def test_degenerate_weights(self):
        params = [Tensor(np.full(3, 5.0))]
        self.assertEqual(total_loss(1.25, 9.0, params, LossConfig(beta=0.0, l2=0.0)).item(), 1.25)
        self.assertEqual(total_loss(1.25, None, [Tensor(np.zeros(3))], LossConfig(l2=0.5)).item(), 1.25)

    def test_crf_is_excluded_from_regularizer(self):
        corpus = tiny_corpus()
        model = tiny_model(corpus)
        cfg = LossConfig(beta=0.0, l2=1.0)
        before = total_loss(0.0, None, regularized_parameters(model, cfg), cfg).item()
        model.crf.transitions.data[0, 1] += 3.0
        after = total_loss(0.0, None, regularized_parameters(model, cfg), cfg).item()
        self.assertEqual(before, after)
        names = {p.name for p in model.parameters() if p.tensor in regularized_parameters(model, cfg)}
        self.assertFalse(any(name.startswith('crf.') for name in names))

    def test_negative_weights_rejected(self):
        with self.assertRaises(ConfigurationError):
            LossConfig(beta=-0.1)


class AdamTests(SimpleTestCase):
    def test_first_step_matches_hand_recursion(self):
        module = grouped_module(['non_core'])
        (param,) = module.parameters()
        grad = np.array([0.5, -2.0])
        adam_step([param], [grad], AdamState(), 0.001)
        # bias-corrected first step is lr * g / (|g| + eps)
        np.testing.assert_allclose(param.value, 1.0 - 0.001 * grad / (np.abs(grad) + 1e-8), rtol=0, atol=1e-12)

    def test_zero_gradient_decays_moments(self):
        module = grouped_module(['non_core'])
        (param,) = module.parameters()
        state = AdamState()
        adam_step([param], [np.ones(2)], state, 0.001)
        first = state.first[param.name].copy()
        value = param.value.copy()
        adam_step([param], [np.zeros(2)], state, 0.0)
        np.testing.assert_allclose(state.first[param.name], 0.9 * first)
        np.testing.assert_array_equal(param.value, value)

    def test_frozen_parameter_is_untouched(self):
        module = grouped_module(['non_core', 'highway'])
        frozen = module.parameters()[1]
        frozen.trainable = False
        before = frozen.value.tobytes()
        params = module.parameters()
        adam_step(params, [np.ones(2), np.ones(2)], AdamState(), 0.1)
        self.assertEqual(frozen.value.tobytes(), before)

    def test_shape_mismatch(self):
        module = grouped_module(['non_core'])
        with self.assertRaises(DimensionError):
            adam_step(module.parameters(), [np.ones(3)], AdamState(), 0.1)

    def test_per_parameter_rates(self):
        module = grouped_module(['non_core', 'highway'])
        params = module.parameters()
        adam_step(params, [np.ones(2), np.ones(2)], AdamState(), {'non_core': 0.1, 'highway': 0.0})
        self.assertTrue(np.all(params[0].value < 1.0))
        np.testing.assert_array_equal(params[1].value, [1.0, 1.0])


class SchedulerTests(SimpleTestCase):
    cfg = STLRConfig(lr_max=0.01, cut_frac=0.1, ratio=32)

    def test_stlr_hand_values(self):
        self.assertAlmostEqual(stlr(55, 100, self.cfg), 0.01 * 16.5 / 32, places=15)
        self.assertAlmostEqual(stlr(10, 100, self.cfg), 0.01, places=15)
        self.assertAlmostEqual(stlr(0, 100, self.cfg), 0.01 / 32, places=15)

    def test_stlr_needs_steps(self):
        with self.assertRaises(ConfigurationError):
            stlr(0, 0, self.cfg)
        with self.assertRaises(ConfigurationError):
            stlr(101, 100, self.cfg)

    def test_plateau_halves_after_patience(self):
        scheduler = PlateauScheduler(0.001, patience=2, factor=0.5)
        rates = [scheduler.step(loss) for loss in (1.0, 0.9, 0.9, 0.9, 0.9)]
        self.assertEqual(rates, [0.001, 0.001, 0.001, 0.001, 0.0005])

    def test_plateau_ignores_tiny_gains(self):
        scheduler = PlateauScheduler(1.0, patience=0, factor=0.5)
        scheduler.step(1.0)
        self.assertEqual(scheduler.step(1.0 - 1e-6), 0.5)


class UnfreezeTests(SimpleTestCase):
    def test_stage_zero_only_non_core(self):
        module = grouped_module(GROUPS)
        gradual_unfreeze(module, FinetuneSchedule(), 0)
        trainable = [p.group for p in module.parameters() if p.trainable]
        self.assertEqual(trainable, ['non_core'])

    def test_last_stage_trains_everything(self):
        module = grouped_module(GROUPS)
        report = gradual_unfreeze(module, FinetuneSchedule(), len(GROUPS))
        self.assertTrue(all(p.trainable for p in module.parameters()))
        self.assertAlmostEqual(report['highway'][1], (1 / 2.6) ** 3)

    def test_stages_are_monotone(self):
        schedule = FinetuneSchedule(epochs_per_stage=2)
        stages = [schedule.stage_for_epoch(e) for e in range(20)]
        self.assertEqual(stages, sorted(stages))
        self.assertEqual(stages[-1], len(GROUPS))

    def test_unknown_group(self):
        with self.assertRaises(ConfigurationError):
            gradual_unfreeze(grouped_module(['non_core', 'mystery']), FinetuneSchedule(), 1)
        with self.assertRaises(ConfigurationError):
            FinetuneSchedule(groups=('non_core', 'mystery'))

    def test_stage_out_of_range(self):
        with self.assertRaises(ConfigurationError):
            gradual_unfreeze(grouped_module(GROUPS), FinetuneSchedule(), len(GROUPS) + 1)


class TrainingLoopTests(SimpleTestCase):
    def test_loss_goes_down(self):
        corpus = tiny_corpus()
        result = train(tiny_model(corpus), corpus, quick_config(epochs=3))
        self.assertEqual([r['epoch'] for r in result.log], [0, 1, 2, 3])
        self.assertLess(result.log[-1]['train_loss'], result.log[0]['train_loss'])

    def test_baseline_loss_uses_a_train_prefix(self):
        corpus = tiny_corpus()
        expected = evaluate(tiny_model(corpus), corpus.split('train')[:3])['loss']
        result = train(tiny_model(corpus), corpus, quick_config(epochs=1, loss_sample=3))
        self.assertEqual(result.log[0]['train_loss'], expected)
        with self.assertRaises(ConfigurationError):
            quick_config(loss_sample=0)

    def test_same_seed_same_log(self):
        corpus = tiny_corpus()
        with tempfile.TemporaryDirectory() as tmp:
            texts = []
            for run in ('a', 'b'):
                path = Path(tmp) / run / 'metrics.jsonl'
                train(tiny_model(corpus), corpus, quick_config(metrics_path=str(path)))
                texts.append(path.read_text())
        self.assertEqual(texts[0], texts[1])
        records = [json.loads(line) for line in texts[0].splitlines()]
        self.assertEqual(len(records), 3)

    def test_best_checkpoint_is_written(self):
        corpus = tiny_corpus()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'model.mtag'
            result = train(tiny_model(corpus), corpus, quick_config(checkpoint_path=str(path)))
            restored = TaggerModel.load(path)
        self.assertEqual(parameter_checksum(restored.state_dict()), parameter_checksum(result.model.state_dict()))

    def test_secondary_and_unfreezing(self):
        corpus = tiny_corpus()
        model = tiny_model(corpus, use_secondary=True, concat_ngram_to_crf=True)
        cfg = quick_config(scheduler='stlr', gradual_unfreezing=True, schedule=FinetuneSchedule(epochs_per_stage=1))
        result = train(model, corpus, cfg)
        self.assertIn('dev_simplified_accuracy', result.log[-1])
        # two epochs reach stage 1; without context layers bilstm2 holds nothing
        self.assertEqual({p.group for p in model.parameters() if p.trainable}, {'non_core'})

    def test_empty_dev_split(self):
        corpus = tiny_corpus()
        corpus.splits['dev'] = []
        with self.assertRaises(InputError):
            train(tiny_model(corpus), corpus, quick_config())

    def test_non_finite_weights(self):
        corpus = tiny_corpus()
        model = tiny_model(corpus)
        model.crf.emission_bias.data[0] = np.nan
        with self.assertRaises(NumericalError):
            train(model, corpus, quick_config())

    def test_target_accuracy_stops_early(self):
        corpus = tiny_corpus()
        result = train(tiny_model(corpus), corpus, quick_config(epochs=5, target_accuracy=0.0))
        self.assertEqual(len(result.log), 2)
        self.assertEqual(epochs_to_reach(result.log, 0.0), 1)
        self.assertIsNone(epochs_to_reach(result.log, 1.5))

    def test_evaluate_report(self):
        corpus = tiny_corpus()
        report = evaluate(tiny_model(corpus, use_secondary=True), corpus.split('dev'))
        self.assertTrue({'loss', 'accuracy', 'weighted_f1', 'per_label_f1', 'wa_f1', 'simplified_accuracy'}
                        <= set(report))
        with self.assertRaises(InputError):
            evaluate(tiny_model(corpus), [])


class TransferTests(SimpleTestCase):
    def setUp(self):
        self.lid = tiny_corpus()
        self.pos = tiny_corpus(task='pos')
        self.pretrained = TaggerModel(
            tiny_config(), self.lid.scheme, self.lid.character_vocabulary()).to_checkpoint()

    def test_frozen_keeps_encoder_bytes(self):
        before = parameter_checksum(self.pretrained.state, 'encoder.')
        result = transfer(self.pretrained, self.pos, 'frozen', quick_config())
        self.assertEqual(parameter_checksum(result.model.state_dict(), 'encoder.'), before)
        self.assertTrue(all(not p.trainable for n, p in result.model.named_parameters() if n.startswith('encoder.')))

    def test_trainable_changes_encoder(self):
        before = parameter_checksum(self.pretrained.state, 'encoder.')
        result = transfer(self.pretrained, self.pos, TransferMode.TRAINABLE, quick_config())
        self.assertNotEqual(parameter_checksum(result.model.state_dict(), 'encoder.'), before)

    def test_none_starts_fresh(self):
        fresh = build_transfer_model(self.pretrained, self.pos, 'none', tiny_config(seed=99))
        copied = build_transfer_model(self.pretrained, self.pos, 'frozen', tiny_config(seed=99))
        self.assertNotEqual(parameter_checksum(fresh.state_dict(), 'encoder.'),
                            parameter_checksum(copied.state_dict(), 'encoder.'))
        self.assertEqual(parameter_checksum(copied.state_dict(), 'encoder.'),
                         parameter_checksum(self.pretrained.state, 'encoder.'))

    def test_transfer_with_static_embeddings(self):
        table = EmbeddingTable(dim=2, entries={'Delhi': np.array([1.0, -1.0])})
        before = parameter_checksum(self.pretrained.state, 'encoder.')
        result = transfer(self.pretrained, self.pos, 'frozen', quick_config(epochs=1),
                          tiny_config(use_static=True), static_tables=[table], static_paths=['vec.txt'])
        self.assertEqual(result.model.config.static_dims, (2,))
        self.assertEqual(result.model.static_paths, ['vec.txt'])
        self.assertEqual(parameter_checksum(result.model.state_dict(), 'encoder.'), before)

    def test_incompatible_encoder(self):
        with self.assertRaisesMessage(LoadError, 'pooling_mode'):
            build_transfer_model(self.pretrained, self.pos, 'frozen', tiny_config(PoolingMode.MAXPOOL))


class PositionShuffleTests(SimpleTestCase):
    def test_report(self):
        corpus = tiny_corpus()
        model = tiny_model(corpus, use_secondary=True)
        report = position_shuffle_analysis(model, corpus.split('dev'), seed=5)
        self.assertEqual(report['target'], 'simplified')
        self.assertTrue({'accuracy', 'shuffled_accuracy', 'probability_gap'} <= set(report))
        self.assertEqual(report, position_shuffle_analysis(model, corpus.split('dev'), seed=5))

    def test_identical_position_rows_make_shuffling_a_no_op(self):
        corpus = tiny_corpus()
        model = tiny_model(corpus, use_secondary=True)
        rng = np.random.default_rng(4)
        for table in model.encoder.position_tables.values():
            table.data[...] = rng.normal(size=table.shape[1])
        report = position_shuffle_analysis(model, corpus.split('dev'), seed=5)
        self.assertEqual(report['accuracy'], report['shuffled_accuracy'])
        self.assertEqual(report['probability_gap'], 0.0)
