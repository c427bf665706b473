"""Character n-gram word encoder with position-aware hierarchical attention.

A word is embedded character by character, convolved once per n-gram
order, and each order's feature maps are pooled into one vector, either
by max-pooling or by attention whose scores see a learned embedding of
each n-gram's start offset. A second attention weighs the per-order
vectors, which are concatenated, projected and passed through a highway
layer to give the token vector.
"""
import copy
import dataclasses
import logging
import unicodedata
import zlib
from collections import namedtuple
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError, DimensionError, InputError, ModeError
from .numerics import (
    DTYPE, Function, Module, Tensor, concat, conv1d_valid, gather, glorot, linear, softmax_array,
    tanh, uniform,
)
from .recurrent import BiLSTM

logger = logging.getLogger(__name__)

PAD = '\x00'
UNK = '\x01'
PAD_DISPLAY = '␣'


class PoolingMode(str, Enum):
    MAXPOOL = 'maxpool'
    ATTN = 'attn'
    POS_ATTN = 'posattn'
    POS_HIER_ATTN = 'poshierattn'

    @property
    def attentive(self):
        return self is not PoolingMode.MAXPOOL

    @property
    def positional(self):
        return self in (PoolingMode.POS_ATTN, PoolingMode.POS_HIER_ATTN)

    @property
    def hierarchical(self):
        return self is PoolingMode.POS_HIER_ATTN


def _default_channels():
    return {1: 32, 2: 32, 3: 64}


@dataclass
class EncoderConfig:
    char_vocab_size: int = 2
    char_emb_dim: int = 16
    orders: tuple = (1, 2, 3)
    channels: dict = field(default_factory=_default_channels)
    max_word_len: int = 50
    attention_dim: int = 64
    pooling_mode: PoolingMode = PoolingMode.POS_HIER_ATTN
    token_dim: int = 128
    highway: bool = True
    context_layers: int = 0
    position_init: float = 0.05

    def __post_init__(self):
        self.orders = tuple(sorted(int(j) for j in self.orders))
        self.channels = {int(j): int(c) for j, c in self.channels.items()}
        self.pooling_mode = PoolingMode(self.pooling_mode)
        if not self.orders or self.orders[0] < 1:
            raise ConfigurationError(f"n-gram orders must be positive, got {self.orders}")
        if self.orders[-1] > self.max_word_len:
            raise ConfigurationError(
                f"largest order {self.orders[-1]} exceeds max_word_len {self.max_word_len}")
        missing = [j for j in self.orders if j not in self.channels]
        if missing:
            raise ConfigurationError(f"no channel count for orders {missing}")
        if any(self.channels[j] < 1 for j in self.orders):
            raise ConfigurationError('channel counts must be at least 1')
        if self.attention_dim < 1 or self.char_emb_dim < 1 or self.token_dim < 1:
            raise ConfigurationError('attention_dim, char_emb_dim and token_dim must be positive')
        if self.context_layers not in (0, 1, 2):
            raise ConfigurationError(f"context_layers must be 0, 1 or 2, got {self.context_layers}")
        if self.context_layers and self.token_dim % 2:
            raise ConfigurationError('contextual layers need an even token_dim')

    @property
    def enhanced_dim(self):
        return sum(self.channels[j] for j in self.orders)

    def to_dict(self):
        return {
            'char_vocab_size': self.char_vocab_size,
            'char_emb_dim': self.char_emb_dim,
            'orders': list(self.orders),
            'channels': {str(j): self.channels[j] for j in self.orders},
            'max_word_len': self.max_word_len,
            'attention_dim': self.attention_dim,
            'pooling_mode': self.pooling_mode.value,
            'token_dim': self.token_dim,
            'highway': self.highway,
            'context_layers': self.context_layers,
            'position_init': self.position_init,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


def normalize_word(word):
    return unicodedata.normalize('NFC', word)


def char_sequence(word, config):
    """Characters fed to the convolutions: NFC, truncated to k, right-padded to the largest order."""
    chars = list(normalize_word(word))
    if not chars:
        raise InputError('cannot encode an empty word')
    chars = chars[:config.max_word_len]
    shortfall = config.orders[-1] - len(chars)
    if shortfall > 0:
        chars.extend([PAD] * shortfall)
    return chars


class CharVocabulary:
    """Character index with reserved PAD (row 0) and UNK (row 1)."""

    def __init__(self, chars=()):
        self.chars = [PAD, UNK] + sorted(set(chars) - {PAD, UNK})
        self._index = {ch: i for i, ch in enumerate(self.chars)}

    def __len__(self):
        return len(self.chars)

    def __eq__(self, other):
        return isinstance(other, CharVocabulary) and self.chars == other.chars

    @classmethod
    def from_words(cls, words):
        chars = set()
        for word in words:
            chars.update(normalize_word(word))
        return cls(chars)

    def encode(self, chars):
        unk = self._index[UNK]
        return [self._index.get(ch, unk) for ch in chars]

    def to_list(self):
        return self.chars[2:]


def parameter_rng(seed, name):
    """Generator keyed by parameter name so weights do not depend on creation order."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode('utf-8'))])


# =====================================================
# Pooling operations
# =====================================================

@dataclass
class NgramAttentionParams:
    weight: Tensor
    bias: Tensor
    v: Tensor


@dataclass
class HierAttentionParams:
    weights: list
    bias: Tensor
    v: Tensor


class PositionAwareAttention(Function):
    """Scores ``u_i = v . tanh(W (x_i + p_i) + b)``, returns ``sum_i softmax(u)_i x_i``."""

    @staticmethod
    def forward(ctx, x, p, weight, bias, v):
        summed = x + p
        hidden = np.tanh(summed @ weight.T + bias)
        alphas = softmax_array(hidden @ v)
        ctx.save_for_backward(x, summed, weight, v, hidden)
        ctx.alphas = alphas
        return alphas @ x

    @staticmethod
    def backward(ctx, grad):
        x, summed, weight, v, hidden = ctx.saved
        alphas = ctx.alphas
        d_alpha = x @ grad
        d_scores = alphas * (d_alpha - np.dot(alphas, d_alpha))
        d_hidden = np.outer(d_scores, v) * (1.0 - hidden * hidden)
        d_summed = d_hidden @ weight
        return (
            np.outer(alphas, grad) + d_summed,
            d_summed,
            d_hidden.T @ summed,
            d_hidden.sum(axis=0),
            hidden.T @ d_scores,
        )


class HierarchicalAttention(Function):
    """Attention across order vectors; emits the concatenation of ``beta_j * z_j``."""

    @staticmethod
    def forward(ctx, *arrays, n_orders=1):
        zs, weights = arrays[:n_orders], arrays[n_orders:2 * n_orders]
        bias, v = arrays[2 * n_orders], arrays[2 * n_orders + 1]
        hiddens = [np.tanh(w @ z + bias) for w, z in zip(weights, zs)]
        betas = softmax_array(np.array([h @ v for h in hiddens]))
        ctx.save_for_backward(zs, weights, v, hiddens)
        ctx.betas = betas
        return np.concatenate([beta * z for beta, z in zip(betas, zs)])

    @staticmethod
    def backward(ctx, grad):
        zs, weights, v, hiddens = ctx.saved
        betas = ctx.betas
        bounds = np.cumsum([0] + [z.shape[0] for z in zs])
        pieces = [grad[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
        d_beta = np.array([g @ z for g, z in zip(pieces, zs)])
        d_scores = betas * (d_beta - np.dot(betas, d_beta))
        d_zs, d_weights = [], []
        d_bias = np.zeros_like(hiddens[0])
        d_v = np.zeros_like(v)
        for z, w, h, g, beta, ds in zip(zs, weights, hiddens, pieces, betas, d_scores):
            d_v += ds * h
            d_pre = ds * v * (1.0 - h * h)
            d_bias += d_pre
            d_weights.append(np.outer(d_pre, z))
            d_zs.append(beta * g + w.T @ d_pre)
        return tuple(d_zs) + tuple(d_weights) + (d_bias, d_v)


class MaxPool(Function):
    @staticmethod
    def forward(ctx, x):
        if x.shape[0] < 1:
            raise DimensionError('max-pool over zero positions')
        ctx.shape = x.shape
        ctx.argmax = np.argmax(x, axis=0)
        return x[ctx.argmax, np.arange(x.shape[1])]

    @staticmethod
    def backward(ctx, grad):
        full = np.zeros(ctx.shape, dtype=DTYPE)
        full[ctx.argmax, np.arange(ctx.shape[1])] = grad
        return (full,)


class Highway(Function):
    """``g * relu(W_t x + b_t) + (1 - g) * x`` with ``g = sigmoid(W_g x + b_g)``."""

    @staticmethod
    def forward(ctx, x, w_transform, b_transform, w_gate, b_gate):
        pre = w_transform @ x + b_transform
        transform = np.maximum(pre, 0.0)
        gate = expit(w_gate @ x + b_gate)
        ctx.save_for_backward(x, w_transform, w_gate, pre > 0, transform, gate)
        return gate * transform + (1.0 - gate) * x

    @staticmethod
    def backward(ctx, grad):
        x, w_transform, w_gate, mask, transform, gate = ctx.saved
        d_pre_t = grad * gate * mask
        d_pre_g = grad * (transform - x) * gate * (1.0 - gate)
        d_x = grad * (1.0 - gate) + w_transform.T @ d_pre_t + w_gate.T @ d_pre_g
        return d_x, np.outer(d_pre_t, x), d_pre_t, np.outer(d_pre_g, x), d_pre_g


def position_aware_attention(x, positions, table, params):
    """Pool ``m`` n-gram vectors of one order.

    ``positions`` index rows of ``table``; pass ``table=None`` for the
    position-free variant. Returns the pooled vector and the weights.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    m = x.shape[0]
    if m < 1:
        raise DimensionError('attention over zero n-grams')
    if table is None:
        p = Tensor(np.zeros(x.shape))
    else:
        rows = table.shape[0]
        if len(positions) != m or max(positions) >= rows:
            raise DimensionError(
                f"{m} n-grams need positions below {rows}, got {list(positions)[:5]}...")
        p = gather(table, positions)
    z, ctx = PositionAwareAttention.apply_with_context(x, p, params.weight, params.bias, params.v)
    return z, ctx.alphas


def hierarchical_attention(z_by_order, params):
    """Returns the weighted concatenation and the per-order weights."""
    n = len(z_by_order)
    if n < 1:
        raise DimensionError('hierarchical attention needs at least one order')
    if len(params.weights) != n:
        raise DimensionError(f"{n} order vectors but {len(params.weights)} projections")
    out, ctx = HierarchicalAttention.apply_with_context(
        *z_by_order, *params.weights, params.bias, params.v, n_orders=n)
    return out, ctx.betas


def maxpool_downsample(x):
    return MaxPool.apply(x)


# =====================================================
# Attention traces
# =====================================================

@dataclass
class AttentionTrace:
    word: str
    orders: dict = field(default_factory=dict)
    hier_alphas: list = None

    def records(self, pred=None, gold=None, **extra):
        """One JSON-ready record per n-gram order."""
        hier = [] if self.hier_alphas is None else [float(a) for a in self.hier_alphas]
        for order, ngrams in self.orders.items():
            yield {
                **extra,
                'word': self.word,
                'order': order,
                'ngrams': [{'text': text, 'pos': pos, 'alpha': float(alpha)} for text, pos, alpha in ngrams],
                'hier': hier,
                'pred': pred,
                'gold': gold,
            }


def attention_position_profile(traces):
    """Mean attention mass on the first, inner and last n-gram of each order.

    Words with a single n-gram for an order are skipped for that order.
    The ``uniform`` entry is the mass a flat distribution would give the
    last n-gram, averaged the same way.
    """
    sums, counts = {}, {}
    for trace in traces:
        for order, ngrams in trace.orders.items():
            m = len(ngrams)
            if m < 2:
                continue
            alphas = [alpha for _, _, alpha in ngrams]
            bucket = sums.setdefault(order, {'first': 0.0, 'inner': 0.0, 'last': 0.0, 'uniform': 0.0})
            bucket['first'] += alphas[0]
            bucket['last'] += alphas[-1]
            bucket['inner'] += sum(alphas[1:-1])
            bucket['uniform'] += 1.0 / m
            counts[order] = counts.get(order, 0) + 1
    return {
        order: {key: value / counts[order] for key, value in bucket.items()}
        for order, bucket in sums.items()
    }


EncodedWord = namedtuple('EncodedWord', 'token_vec enhanced_rep trace')


# =====================================================
# Encoder module
# =====================================================

class CharNgramEncoder(Module):
    def __init__(self, config, vocabulary, seed=0):
        super().__init__()
        if config.char_vocab_size != len(vocabulary):
            config = dataclasses.replace(config, char_vocab_size=len(vocabulary))
        self.config = config
        self.vocabulary = vocabulary
        self._position_rng = None

        def rng(name):
            return parameter_rng(seed, f"encoder.{name}")

        mode = config.pooling_mode
        d, a = config.char_emb_dim, config.attention_dim
        self.char_embeddings = self.add_parameter(
            'char_embeddings', uniform(rng('char_embeddings'), (len(vocabulary), d), 0.5), 'char_embeddings')

        self.kernels, self.conv_biases = {}, {}
        self.position_tables, self.attention = {}, {}
        positions, hier = Module(), Module()
        hier_weights = []
        for j in config.orders:
            c = config.channels[j]
            conv = self.add_module(f"conv.order{j}", Module())
            self.kernels[j] = conv.add_parameter(
                'kernel', uniform(rng(f"conv.order{j}.kernel"), (j, d, c), 1.0 / np.sqrt(j * d)), 'convolutions')
            self.conv_biases[j] = conv.add_parameter('bias', np.zeros(c), 'convolutions')
            if not mode.attentive:
                continue
            attn = self.add_module(f"attn.order{j}", Module())
            self.attention[j] = NgramAttentionParams(
                weight=attn.add_parameter('Wx', glorot(rng(f"attn.order{j}.Wx"), (a, c)), 'non_core'),
                bias=attn.add_parameter('bx', np.zeros(a), 'non_core'),
                v=attn.add_parameter('v', uniform(rng(f"attn.order{j}.v"), (a,), 1.0 / np.sqrt(a)), 'non_core'),
            )
            if mode.positional:
                rows = config.max_word_len - j + 1
                self.position_tables[j] = positions.add_parameter(
                    f"order{j}", uniform(rng(f"positions.order{j}"), (rows, c), config.position_init), 'non_core')
            if mode.hierarchical:
                hier_weights.append(
                    hier.add_parameter(f"order{j}.Wh", glorot(rng(f"hier.order{j}.Wh"), (a, c)), 'non_core'))

        if mode.positional:
            self.add_module('positions', positions)
        self.hier = None
        if mode.hierarchical:
            self.add_module('hier', hier)
            self.hier = HierAttentionParams(
                weights=hier_weights,
                bias=hier.add_parameter('bh', np.zeros(a), 'non_core'),
                v=hier.add_parameter('vh', uniform(rng('hier.vh'), (a,), 1.0 / np.sqrt(a)), 'non_core'),
            )

        projection = self.add_module('projection', Module())
        self.projection_weight = projection.add_parameter(
            'weight', glorot(rng('projection.weight'), (config.token_dim, config.enhanced_dim)), 'projection')
        self.projection_bias = projection.add_parameter('bias', np.zeros(config.token_dim), 'projection')

        self.highway = None
        if config.highway:
            highway = self.add_module('highway', Module())
            t = config.token_dim
            self.highway = (
                highway.add_parameter('transform.weight', glorot(rng('highway.transform.weight'), (t, t)), 'highway'),
                highway.add_parameter('transform.bias', np.zeros(t), 'highway'),
                highway.add_parameter('gate.weight', glorot(rng('highway.gate.weight'), (t, t)), 'highway'),
                highway.add_parameter('gate.bias', np.full(t, -1.0), 'highway'),
            )

        # stand-ins for the biLM layers of a pretrained encoder; unfreeze groups bilstm1/bilstm2
        self.context = []
        for layer in range(1, config.context_layers + 1):
            self.context.append(self.add_module(
                f"context.layer{layer}",
                BiLSTM(config.token_dim, config.token_dim // 2, rng(f"context.layer{layer}"), f"bilstm{layer}")))

    @property
    def output_dim(self):
        return self.config.token_dim

    @property
    def enhanced_dim(self):
        return self.config.enhanced_dim

    def embed_chars(self, word):
        chars = char_sequence(word, self.config)
        return gather(self.char_embeddings, self.vocabulary.encode(chars)), chars

    def position_indices(self, order, count):
        if self._position_rng is None:
            return list(range(count))
        rows = self.config.max_word_len - order + 1
        return self._position_rng.integers(0, rows, size=count).tolist()

    def encode_word(self, word):
        mode = self.config.pooling_mode
        embedded, chars = self.embed_chars(word)
        pooled = []
        trace = AttentionTrace(word=word) if mode.attentive else None
        for j in self.config.orders:
            features = tanh(conv1d_valid(embedded, self.kernels[j], self.conv_biases[j]))
            if not mode.attentive:
                pooled.append(maxpool_downsample(features))
                continue
            m = features.shape[0]
            positions = self.position_indices(j, m)
            table = self.position_tables.get(j) if mode.positional else None
            z, alphas = position_aware_attention(features, positions, table, self.attention[j])
            pooled.append(z)
            trace.orders[j] = [
                (''.join(chars[i:i + j]).replace(PAD, PAD_DISPLAY), i, float(alphas[i])) for i in range(m)
            ]
        if mode.hierarchical:
            enhanced, betas = hierarchical_attention(pooled, self.hier)
            trace.hier_alphas = [float(b) for b in betas]
        else:
            enhanced = concat(pooled)
        token = linear(enhanced, self.projection_weight, self.projection_bias)
        if self.highway is not None:
            token = Highway.apply(token, *self.highway)
        return EncodedWord(token, enhanced, trace)

    def contextualize(self, token_vecs):
        for layer in self.context:
            token_vecs = layer(token_vecs)
        return token_vecs


def shuffle_positions(model, seed):
    """Inference view whose position rows are drawn uniformly at random per lookup.

    Accepts an encoder or anything holding one as ``.encoder``; the
    parameters are shared, never modified.
    """
    encoder = getattr(model, 'encoder', model)
    if not encoder.config.pooling_mode.positional:
        raise ModeError(f"position shuffling needs a positional pooling mode, got {encoder.config.pooling_mode.value}")
    shuffled = copy.copy(encoder)
    shuffled._position_rng = np.random.default_rng(seed)
    logger.debug("position shuffling enabled, seed %s", seed)
    if model is encoder:
        return shuffled
    view = copy.copy(model)
    view._modules = {**model._modules, 'encoder': shuffled}
    view.encoder = shuffled
    return view
