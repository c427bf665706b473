"""LSTM cell with a fused analytic gradient and the bidirectional wrapper."""
import numpy as np
from scipy.special import expit

from .numerics import DTYPE, Function, Module, Tensor, glorot, slice_vector, concat


class LSTMCell(Function):
    """One LSTM step, gates ordered input, forget, candidate, output.

    Returns ``[h ; c]`` so both states stay on the tape.
    """

    @staticmethod
    def forward(ctx, x, h_prev, c_prev, w_input, w_hidden, bias):
        size = h_prev.shape[0]
        pre = w_input @ x + w_hidden @ h_prev + bias
        i = expit(pre[:size])
        f = expit(pre[size:2 * size])
        g = np.tanh(pre[2 * size:3 * size])
        o = expit(pre[3 * size:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        ctx.save_for_backward(x, h_prev, c_prev, w_input, w_hidden, i, f, g, o, tc)
        return np.concatenate([h, c])

    @staticmethod
    def backward(ctx, grad):
        x, h_prev, c_prev, w_input, w_hidden, i, f, g, o, tc = ctx.saved
        size = h_prev.shape[0]
        dh, dc = grad[:size], grad[size:]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dpre = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        return (
            w_input.T @ dpre,
            w_hidden.T @ dpre,
            dc * f,
            np.outer(dpre, x),
            np.outer(dpre, h_prev),
            dpre,
        )


class LSTM(Module):
    def __init__(self, input_dim, hidden_dim, rng, group):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.w_input = self.add_parameter('w_input', glorot(rng, (4 * hidden_dim, input_dim)), group)
        self.w_hidden = self.add_parameter('w_hidden', glorot(rng, (4 * hidden_dim, hidden_dim)), group)
        bias = np.zeros(4 * hidden_dim, dtype=DTYPE)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        self.bias = self.add_parameter('bias', bias, group)

    def run(self, inputs):
        h = Tensor(np.zeros(self.hidden_dim))
        c = Tensor(np.zeros(self.hidden_dim))
        states = []
        for x in inputs:
            hc = LSTMCell.apply(x, h, c, self.w_input, self.w_hidden, self.bias)
            h = slice_vector(hc, 0, self.hidden_dim)
            c = slice_vector(hc, self.hidden_dim, 2 * self.hidden_dim)
            states.append(h)
        return states


class BiLSTM(Module):
    """Forward and backward LSTMs whose states are concatenated per token."""

    def __init__(self, input_dim, hidden_dim, rng, group):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.forward_cell = self.add_module('forward', LSTM(input_dim, hidden_dim, rng, group))
        self.backward_cell = self.add_module('backward', LSTM(input_dim, hidden_dim, rng, group))

    @property
    def output_dim(self):
        return 2 * self.hidden_dim

    def __call__(self, inputs):
        inputs = list(inputs)
        forward_states = self.forward_cell.run(inputs)
        backward_states = self.backward_cell.run(reversed(inputs))[::-1]
        return [concat([fw, bw]) for fw, bw in zip(forward_states, backward_states)]
