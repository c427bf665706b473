import numpy as np
from django.test import SimpleTestCase

from morphtag.encoder import (
    HierAttentionParams, Highway, NgramAttentionParams, hierarchical_attention, position_aware_attention,
)
from morphtag.exceptions import DimensionError, InputError, LoadError, NumericalError
from morphtag.numerics import (
    Module, Tensor, add, conv1d_valid, gather, grad_check, linear, matmul, no_grad, softmax, softmax_cross_entropy,
    squared_l2, tanh, total,
)
from morphtag.recurrent import LSTMCell

TOLERANCE = 1e-4


def nested_loop_conv(x, kernel, bias):
    length, _ = x.shape
    width, dim, channels = kernel.shape
    out = np.zeros((length - width + 1, channels))
    for i in range(length - width + 1):
        for c in range(channels):
            value = bias[c]
            for t in range(width):
                for d in range(dim):
                    value += x[i + t, d] * kernel[t, d, c]
            out[i, c] = value
    return out


class SoftmaxTests(SimpleTestCase):
    def test_known_values(self):
        probs = softmax(Tensor([1.0, 2.0, 3.0])).data
        np.testing.assert_allclose(probs, [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_large_inputs_stay_finite(self):
        probs = softmax(Tensor([1000.0, 1000.0])).data
        np.testing.assert_allclose(probs, [0.5, 0.5])

    def test_empty_vector_is_rejected(self):
        with self.assertRaises(DimensionError):
            softmax(Tensor(np.zeros(0)))

    def test_cross_entropy_matches_log_softmax(self):
        logits = Tensor([0.5, -1.0, 2.0])
        loss = softmax_cross_entropy(logits, 2).item()
        expected = -np.log(softmax(logits).data[2])
        self.assertAlmostEqual(loss, expected, places=12)

    def test_cross_entropy_target_out_of_range(self):
        with self.assertRaises(InputError):
            softmax_cross_entropy(Tensor([0.0, 1.0]), 2)


class ConvolutionTests(SimpleTestCase):
    def test_matches_nested_loops(self):
        rng = np.random.default_rng(3)
        for width in (1, 2, 3):
            x = rng.normal(size=(7, 4))
            kernel = rng.normal(size=(width, 4, 5))
            bias = rng.normal(size=5)
            out = conv1d_valid(Tensor(x), Tensor(kernel), Tensor(bias)).data
            self.assertEqual(out.shape, (8 - width, 5))
            np.testing.assert_allclose(out, nested_loop_conv(x, kernel, bias), atol=1e-12)

    def test_input_shorter_than_kernel(self):
        with self.assertRaises(InputError):
            conv1d_valid(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3, 1))), Tensor(np.zeros(1)))

    def test_mismatched_depth(self):
        with self.assertRaises(DimensionError):
            conv1d_valid(Tensor(np.ones((4, 3))), Tensor(np.ones((2, 2, 1))), Tensor(np.zeros(1)))


class MatMulTests(SimpleTestCase):
    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_identity_and_zeros(self):
        a = np.random.default_rng(1).normal(size=(3, 4))
        np.testing.assert_array_equal(matmul(Tensor(a), Tensor(np.eye(4))).data, a)
        np.testing.assert_array_equal(matmul(Tensor(np.zeros((2, 3))), Tensor(a)).data, np.zeros((2, 4)))

    def test_inner_dimensions_must_agree(self):
        with self.assertRaises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with self.assertRaises(DimensionError):
            matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


class GradientTests(SimpleTestCase):
    """Analytic gradients against central differences over ten seeds each."""

    seeds = range(10)

    def assertGradOk(self, op, inputs):
        self.assertLess(grad_check(op, inputs), TOLERANCE)

    def test_conv1d(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)
            self.assertGradOk(
                lambda x, k, b: tanh(conv1d_valid(x, k, b)),
                [rng.normal(size=(6, 3)), rng.normal(size=(2, 3, 4)), rng.normal(size=4)])

    def test_position_aware_attention(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)

            def op(x, table, weight, bias, v):
                params = NgramAttentionParams(weight, bias, v)
                return position_aware_attention(x, [0, 1, 2, 3], table, params)[0]

            self.assertGradOk(op, [
                rng.normal(size=(4, 3)), rng.normal(size=(6, 3)),
                rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=5),
            ])

    def test_hierarchical_attention(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)

            def op(z1, z2, w1, w2, bias, v):
                return hierarchical_attention([z1, z2], HierAttentionParams([w1, w2], bias, v))[0]

            self.assertGradOk(op, [
                rng.normal(size=3), rng.normal(size=2),
                rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=4),
            ])

    def test_highway_and_projection(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)

            def op(x, w, b, wt, bt, wg, bg):
                return Highway.apply(linear(x, w, b), wt, bt, wg, bg)

            # transform bias keeps pre-activations away from the relu kink
            self.assertGradOk(op, [
                rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3),
                rng.normal(size=(3, 3)) * 0.1, np.full(3, 2.0), rng.normal(size=(3, 3)), rng.normal(size=3),
            ])

    def test_lstm_cell(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)
            self.assertGradOk(lambda *args: LSTMCell.apply(*args), [
                rng.normal(size=3), rng.normal(size=2), rng.normal(size=2),
                rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), rng.normal(size=8),
            ])

    def test_matmul(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)
            self.assertGradOk(lambda a, b: tanh(matmul(a, b)), [rng.normal(size=(2, 3)), rng.normal(size=(3, 4))])

    def test_softmax_cross_entropy(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)
            self.assertGradOk(
                lambda x, w, b: softmax_cross_entropy(linear(x, w, b), 1),
                [rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)])

    def test_gather_with_repeated_rows(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)
            self.assertGradOk(lambda table: tanh(gather(table, [0, 2, 2])), [rng.normal(size=(3, 2))])

    def test_squared_l2(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=4)
        self.assertAlmostEqual(squared_l2([Tensor(a), Tensor(b)]).item(), float((a * a).sum() + (b * b).sum()))
        self.assertLess(grad_check(lambda x, y: squared_l2([x, y]), [a, b]), TOLERANCE)
        self.assertEqual(squared_l2([]).item(), 0.0)

    def test_bad_epsilon(self):
        with self.assertRaises(InputError):
            grad_check(tanh, [np.ones(2)], epsilon=0.5)

    def test_non_finite_output(self):
        with self.assertRaises(NumericalError):
            grad_check(lambda x: linear(x, Tensor([[np.inf]]), Tensor([0.0])), [np.ones(1)])


class TapeTests(SimpleTestCase):
    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = tanh(x)
        self.assertFalse(y.requires_grad)
        self.assertIsNone(y.ctx)

    def test_shared_node_accumulates(self):
        x = Tensor(np.array([0.3, -0.2]), requires_grad=True)
        h = tanh(x)
        total(add(h, h)).backward()
        np.testing.assert_allclose(x.grad, 2 * (1 - np.tanh(x.data) ** 2))

    def test_backward_needs_scalar(self):
        with self.assertRaises(DimensionError):
            tanh(Tensor(np.ones(2), requires_grad=True)).backward()


class ModuleTests(SimpleTestCase):
    def make(self):
        outer, inner = Module(), Module()
        outer.add_parameter('w', np.ones((2, 2)), 'non_core')
        inner.add_parameter('b', np.zeros(2), 'projection')
        outer.add_module('inner', inner)
        outer.assign_names()
        return outer

    def test_dotted_names_and_groups(self):
        module = self.make()
        names = [(name, p.group) for name, p in module.named_parameters()]
        self.assertEqual(names, [('w', 'non_core'), ('inner.b', 'projection')])
        self.assertEqual(module.parameters()[1].name, 'inner.b')

    def test_state_dict_round_trip(self):
        module = self.make()
        state = module.state_dict()
        state['inner.b'] = np.array([1.0, 2.0])
        module.load_state_dict(state)
        np.testing.assert_array_equal(module.state_dict()['inner.b'], [1.0, 2.0])

    def test_load_rejects_missing_and_mismatched(self):
        module = self.make()
        with self.assertRaises(LoadError):
            module.load_state_dict({'w': np.ones((2, 2))})
        with self.assertRaisesMessage(LoadError, 'inner.b'):
            module.load_state_dict({'w': np.ones((2, 2)), 'inner.b': np.zeros(3)})

    def test_freezing_drops_gradient(self):
        module = self.make()
        param = module.parameters()[0]
        param.tensor.grad = np.ones((2, 2))
        param.trainable = False
        self.assertIsNone(param.tensor.grad)
        self.assertFalse(param.trainable)
