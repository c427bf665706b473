"""BiLSTM + linear-chain CRF tagger over the character n-gram encoder.

Three optional modifications sit on top of the backbone:

* static word embeddings concatenated to the token vector,
* the enhanced n-gram representation concatenated to the CRF input,
* a context-free softmax head predicting simplified LID labels.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .data import load_embeddings
from .encoder import CharNgramEncoder, CharVocabulary, EncoderConfig, PoolingMode, parameter_rng
from .exceptions import ConfigurationError, InputError
from .numerics import (
    DTYPE, Function, Module, Tensor, add_n, concat, glorot, linear, no_grad, softmax, softmax_cross_entropy,
    stack, uniform,
)
from .recurrent import BiLSTM
from .schemes import SIMPLIFIED_LABELS, LabelScheme
from .serialization import Checkpoint, read_checkpoint, write_checkpoint

logger = logging.getLogger(__name__)

__all__ = [
    'EXPERIMENTS', 'LabelScheme', 'LinearChainCRF', 'Prediction', 'TaggerConfig', 'TaggerFlags',
    'TaggerModel', 'bilstm_forward', 'crf_log_likelihood', 'sequence_score', 'viterbi_decode',
    'write_predictions',
]

BLOCKED = -1e4


# =====================================================
# Linear-chain CRF
# =====================================================

class LinearChainCRF(Module):
    """Emission projection plus an ``(L+2) x (L+2)`` transition matrix.

    Row/column ``L`` is the virtual START state and ``L+1`` the STOP state.
    Moves into START and out of STOP are pinned at ``-1e4``; no score
    ever reads them, so they never receive gradient.
    """

    def __init__(self, input_dim, num_labels, rng):
        super().__init__()
        self.num_labels = num_labels
        self.input_dim = input_dim
        transitions = uniform(rng, (num_labels + 2, num_labels + 2), 0.1)
        transitions[:, num_labels] = BLOCKED
        transitions[num_labels + 1, :] = BLOCKED
        self.transitions = self.add_parameter('transitions', transitions, 'non_core')
        self.emission_weight = self.add_parameter(
            'emission.weight', glorot(rng, (num_labels, input_dim)), 'non_core')
        self.emission_bias = self.add_parameter('emission.bias', np.zeros(num_labels), 'non_core')

    @property
    def start(self):
        return self.num_labels

    @property
    def stop(self):
        return self.num_labels + 1

    def emissions(self, features):
        return linear(stack(features), self.emission_weight, self.emission_bias)


def _transition_array(crf):
    transitions = crf.transitions if hasattr(crf, 'transitions') else crf
    return transitions.data if isinstance(transitions, Tensor) else np.asarray(transitions, dtype=DTYPE)


def sequence_score(emissions, path, crf):
    """Score of one label path, START and STOP transitions included."""
    emissions = emissions.data if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=DTYPE)
    transitions = _transition_array(crf)
    num_labels = emissions.shape[1]
    start, stop = num_labels, num_labels + 1
    score = transitions[start, path[0]] + transitions[path[-1], stop]
    score += sum(emissions[t, y] for t, y in enumerate(path))
    score += sum(transitions[a, b] for a, b in zip(path[:-1], path[1:]))
    return float(score)


class CRFNegativeLogLikelihood(Function):
    """``log Z - score(gold)`` by the forward algorithm; gradients are marginals minus gold counts."""

    @staticmethod
    def forward(ctx, emissions, transitions, gold=()):
        length, num_labels = emissions.shape
        start, stop = num_labels, num_labels + 1
        inner = transitions[:num_labels, :num_labels]

        alphas = np.empty((length, num_labels))
        alphas[0] = transitions[start, :num_labels] + emissions[0]
        for t in range(1, length):
            alphas[t] = logsumexp(alphas[t - 1][:, None] + inner, axis=0) + emissions[t]
        log_z = logsumexp(alphas[-1] + transitions[:num_labels, stop])

        betas = np.empty((length, num_labels))
        betas[-1] = transitions[:num_labels, stop]
        for t in range(length - 2, -1, -1):
            betas[t] = logsumexp(inner + (emissions[t + 1] + betas[t + 1])[None, :], axis=1)

        ctx.save_for_backward(emissions, inner, alphas, betas)
        ctx.log_z, ctx.gold, ctx.shape = log_z, gold, transitions.shape
        return log_z - sequence_score(emissions, gold, transitions)

    @staticmethod
    def backward(ctx, grad):
        emissions, inner, alphas, betas = ctx.saved
        gold, log_z = ctx.gold, ctx.log_z
        length, num_labels = emissions.shape
        start, stop = num_labels, num_labels + 1

        node = np.exp(alphas + betas - log_z)
        d_emissions = node.copy()
        d_emissions[np.arange(length), gold] -= 1.0

        d_transitions = np.zeros(ctx.shape)
        d_transitions[start, :num_labels] = node[0]
        d_transitions[start, gold[0]] -= 1.0
        d_transitions[:num_labels, stop] = node[-1]
        d_transitions[gold[-1], stop] -= 1.0
        for t in range(length - 1):
            edge = alphas[t][:, None] + inner + (emissions[t + 1] + betas[t + 1])[None, :]
            d_transitions[:num_labels, :num_labels] += np.exp(edge - log_z)
            d_transitions[gold[t], gold[t + 1]] -= 1.0
        return d_emissions * grad, d_transitions * grad


def crf_log_likelihood(emissions, gold, crf):
    """Sequence-level negative log-likelihood of ``gold`` as a scalar tensor."""
    emissions = emissions if isinstance(emissions, Tensor) else Tensor(emissions)
    length, num_labels = emissions.shape
    gold = tuple(int(y) for y in gold)
    if length < 1:
        raise InputError('CRF needs at least one position')
    if len(gold) != length:
        raise InputError(f"{len(gold)} gold labels for {length} positions")
    bad = [y for y in gold if not 0 <= y < num_labels]
    if bad:
        raise InputError(f"gold label indices {bad} outside 0..{num_labels - 1}")
    transitions = crf.transitions if hasattr(crf, 'transitions') else crf
    return CRFNegativeLogLikelihood.apply(emissions, transitions, gold=gold)


def viterbi_decode(emissions, crf):
    """Best path and its score; backpointer ties go to the lowest label index."""
    emissions = emissions.data if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=DTYPE)
    transitions = _transition_array(crf)
    length, num_labels = emissions.shape
    if length < 1:
        raise InputError('cannot decode an empty sequence')
    start, stop = num_labels, num_labels + 1
    inner = transitions[:num_labels, :num_labels]

    delta = transitions[start, :num_labels] + emissions[0]
    backpointers = []
    columns = np.arange(num_labels)
    for t in range(1, length):
        scores = delta[:, None] + inner
        best = np.argmax(scores, axis=0)
        delta = scores[best, columns] + emissions[t]
        backpointers.append(best)
    final = delta + transitions[:num_labels, stop]
    last = int(np.argmax(final))
    path = [last]
    for best in reversed(backpointers):
        path.append(int(best[path[-1]]))
    path.reverse()
    return path, float(final[last])


def bilstm_forward(token_vecs, bilstm):
    token_vecs = list(token_vecs)
    if not token_vecs:
        raise InputError('BiLSTM needs a non-empty sequence')
    return bilstm(token_vecs)


# =====================================================
# Tagger
# =====================================================

@dataclass
class TaggerFlags:
    concat_ngram_to_crf: bool = False
    use_secondary: bool = False
    use_static: bool = False

    def to_dict(self):
        return {
            'concat_ngram_to_crf': self.concat_ngram_to_crf,
            'use_secondary': self.use_secondary,
            'use_static': self.use_static,
        }


# ablation ladder, weakest first: preset name -> (pooling mode, flags)
EXPERIMENTS = {
    'maxpool': (PoolingMode.MAXPOOL, TaggerFlags()),
    'attn': (PoolingMode.ATTN, TaggerFlags()),
    'pos-attn': (PoolingMode.POS_ATTN, TaggerFlags()),
    'pos-hier-attn': (PoolingMode.POS_HIER_ATTN, TaggerFlags()),
    'concat': (PoolingMode.POS_HIER_ATTN, TaggerFlags(concat_ngram_to_crf=True)),
    'secondary': (PoolingMode.POS_HIER_ATTN, TaggerFlags(concat_ngram_to_crf=True, use_secondary=True)),
    'static': (PoolingMode.POS_HIER_ATTN,
               TaggerFlags(concat_ngram_to_crf=True, use_secondary=True, use_static=True)),
}


@dataclass
class TaggerConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden_dim: int = 64
    flags: TaggerFlags = field(default_factory=TaggerFlags)
    static_dims: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigurationError('hidden_dim must be positive')
        self.static_dims = tuple(int(d) for d in self.static_dims)

    def to_dict(self):
        return {
            'encoder': self.encoder.to_dict(),
            'hidden_dim': self.hidden_dim,
            'flags': self.flags.to_dict(),
            'static_dims': list(self.static_dims),
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            encoder=EncoderConfig.from_dict(payload['encoder']),
            hidden_dim=payload['hidden_dim'],
            flags=TaggerFlags(**payload['flags']),
            static_dims=tuple(payload.get('static_dims', ())),
            seed=payload.get('seed', 0),
        )


@dataclass
class SentenceFeatures:
    encoded: list
    crf_inputs: list
    emissions: Tensor


@dataclass
class Prediction:
    labels: list
    simplified: list = None
    traces: list = None
    secondary_probs: list = None


class TaggerModel(Module):
    def __init__(self, config, scheme, vocabulary, static_tables=(), static_paths=()):
        super().__init__()
        config = dataclasses.replace(config)
        flags = config.flags
        static_tables = list(static_tables or ())
        if flags.use_static:
            if not static_tables:
                raise ConfigurationError('use_static is set but no embedding table was supplied')
            dims = tuple(table.dim for table in static_tables)
            if config.static_dims and config.static_dims != dims:
                raise ConfigurationError(f"embedding tables have dims {dims}, model expects {config.static_dims}")
            config.static_dims = dims
        else:
            static_tables = []
            config.static_dims = ()
        self.config = config
        self.scheme = scheme
        self.static_tables = static_tables
        self.static_paths = [str(p) for p in static_paths]

        self.encoder = self.add_module('encoder', CharNgramEncoder(config.encoder, vocabulary, config.seed))
        config.encoder = self.encoder.config
        enhanced_dim = self.encoder.enhanced_dim
        bilstm_in = self.encoder.output_dim + sum(config.static_dims)
        self.bilstm = self.add_module('bilstm', BiLSTM(
            bilstm_in, config.hidden_dim, parameter_rng(config.seed, 'bilstm'), 'non_core'))
        crf_in = self.bilstm.output_dim + (enhanced_dim if flags.concat_ngram_to_crf else 0)
        self.crf = self.add_module('crf', LinearChainCRF(crf_in, len(scheme), parameter_rng(config.seed, 'crf')))

        self.secondary_weight = self.secondary_bias = None
        if flags.use_secondary:
            head = self.add_module('secondary', Module())
            self.secondary_weight = head.add_parameter(
                'weight', glorot(parameter_rng(config.seed, 'secondary.weight'), (len(SIMPLIFIED_LABELS), enhanced_dim)),
                'non_core')
            self.secondary_bias = head.add_parameter('bias', np.zeros(len(SIMPLIFIED_LABELS)), 'non_core')
        self.assign_names()
        logger.debug("tagger built: %d parameter tensors, CRF input %d", len(self.parameters()), crf_in)

    @property
    def flags(self):
        return self.config.flags

    @property
    def vocabulary(self):
        return self.encoder.vocabulary

    # --- features ---

    def static_vector(self, word):
        pieces = []
        for table in self.static_tables:
            vec = table.lookup(word)
            if vec is None:
                vec = table.lookup(word.lower())
            pieces.append(np.zeros(table.dim) if vec is None else vec)
        return Tensor(np.concatenate(pieces)) if pieces else None

    def encode_words(self, words, cache=None):
        """``cache`` maps surfaces to encodings and may be shared while the parameters stay fixed."""
        # the word encoder is context-free, so repeated surfaces share one graph node
        if self.encoder._position_rng is not None:
            cache = None
        elif cache is None:
            cache = {}
        encoded = []
        for word in words:
            if cache is not None and word in cache:
                encoded.append(cache[word])
                continue
            item = self.encoder.encode_word(word)
            if cache is not None:
                cache[word] = item
            encoded.append(item)
        return encoded

    def assemble_features(self, words, cache=None):
        words = list(words)
        if not words:
            raise InputError('cannot tag an empty sentence')
        encoded = self.encode_words(words, cache)
        token_vecs = self.encoder.contextualize([item.token_vec for item in encoded])
        if self.flags.use_static:
            token_vecs = [concat([vec, self.static_vector(word)]) for vec, word in zip(token_vecs, words)]
        contexts = bilstm_forward(token_vecs, self.bilstm)
        if self.flags.concat_ngram_to_crf:
            crf_inputs = [concat([ctx, item.enhanced_rep]) for ctx, item in zip(contexts, encoded)]
        else:
            crf_inputs = contexts
        return SentenceFeatures(encoded, crf_inputs, self.crf.emissions(crf_inputs))

    def secondary_scores(self, enhanced_rep):
        if not self.flags.use_secondary:
            raise ConfigurationError('the secondary head is disabled for this model')
        return linear(enhanced_rep, self.secondary_weight, self.secondary_bias)

    def secondary_logits(self, enhanced_rep):
        """Distribution over lang1 / lang2 / other from word morphology alone."""
        return softmax(self.secondary_scores(enhanced_rep))

    # --- training ---

    def losses_from_features(self, features, sentence):
        gold = [self.scheme.index(label) for label in sentence.labels]
        primary = crf_log_likelihood(features.emissions, gold, self.crf)
        secondary, n_secondary = None, 0
        if self.flags.use_secondary:
            terms = []
            for item, token in zip(features.encoded, sentence.tokens):
                if token.simplified is None:
                    continue
                target = SIMPLIFIED_LABELS.index(token.simplified)
                terms.append(softmax_cross_entropy(self.secondary_scores(item.enhanced_rep), target))
            if terms:
                secondary = add_n(terms)
                n_secondary = len(terms)
        return primary, secondary, n_secondary

    def sentence_losses(self, sentence, cache=None):
        """Returns ``(crf_nll, secondary_nll_sum or None, n_tokens, n_secondary)``."""
        features = self.assemble_features(sentence.surfaces, cache)
        primary, secondary, n_secondary = self.losses_from_features(features, sentence)
        return primary, secondary, len(sentence), n_secondary

    # --- inference ---

    def prediction_from_features(self, features):
        path, _ = viterbi_decode(features.emissions, self.crf)
        labels = [self.scheme.labels[i] for i in path]
        simplified = probs = None
        if self.flags.use_secondary:
            probs = [self.secondary_logits(item.enhanced_rep).data for item in features.encoded]
            simplified = [SIMPLIFIED_LABELS[int(np.argmax(p))] for p in probs]
        traces = [item.trace for item in features.encoded] \
            if self.encoder.config.pooling_mode.attentive else None
        return Prediction(labels=labels, simplified=simplified, traces=traces, secondary_probs=probs)

    def predict(self, words):
        with no_grad():
            return self.prediction_from_features(self.assemble_features(words))

    def score_sentence(self, sentence, cache=None):
        """Losses and prediction from one gradient-free pass."""
        with no_grad():
            features = self.assemble_features(sentence.surfaces, cache)
            primary, secondary, n_secondary = self.losses_from_features(features, sentence)
            prediction = self.prediction_from_features(features)
        return float(primary), (0.0 if secondary is None else float(secondary)), n_secondary, prediction

    # --- persistence ---

    def to_checkpoint(self):
        metadata = {
            'vocabulary': self.vocabulary.to_list(),
            'scheme': self.scheme.to_dict(),
            'static_paths': self.static_paths,
        }
        return Checkpoint(config=self.config.to_dict(), state=self.state_dict(), metadata=metadata)

    def save(self, path):
        return write_checkpoint(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, checkpoint, static_tables=None):
        config = TaggerConfig.from_dict(checkpoint.config)
        metadata = checkpoint.metadata
        if config.flags.use_static and not static_tables:
            paths = metadata.get('static_paths') or []
            if not paths:
                raise ConfigurationError('checkpoint uses static embeddings but records no table paths')
            static_tables = [load_embeddings(p) for p in paths]
        model = cls(
            config,
            LabelScheme.from_dict(metadata['scheme']),
            CharVocabulary(metadata['vocabulary']),
            static_tables=static_tables or (),
            static_paths=metadata.get('static_paths') or (),
        )
        model.load_state_dict(checkpoint.state)
        return model

    @classmethod
    def load(cls, path, static_tables=None):
        return cls.from_checkpoint(read_checkpoint(path), static_tables=static_tables)


def write_predictions(stream, sentences, predictions):
    """CoNLL-style columns: token, predicted label, simplified label when present."""
    for sentence, prediction in zip(sentences, predictions):
        for i, word in enumerate(sentence):
            columns = [word, prediction.labels[i]]
            if prediction.simplified is not None:
                columns.append(prediction.simplified[i])
            stream.write('\t'.join(columns) + '\n')
        stream.write('\n')


def default_checkpoint_name(directory):
    return Path(directory) / 'model.mtag'
