"""Multi-task objective, optimisation, fine-tuning schedules and transfer between tasks."""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .encoder import CharVocabulary, shuffle_positions
from .exceptions import ConfigurationError, DimensionError, InputError, LoadError, NumericalError
from .metrics import accuracy, entity_f1, per_label_f1, wa_f1_from_labels, weighted_f1
from .numerics import Tensor, add_n, scale, squared_l2
from .schemes import SIMPLIFIED_LABELS, Task
from .serialization import Checkpoint, read_checkpoint
from .tagger import TaggerConfig, TaggerModel

logger = logging.getLogger(__name__)

GROUPS = ('non_core', 'bilstm2', 'bilstm1', 'highway', 'projection', 'convolutions', 'char_embeddings')


class TransferMode(str, Enum):
    NONE = 'none'
    FROZEN = 'frozen'
    TRAINABLE = 'trainable'


@dataclass
class LossConfig:
    beta: float = 0.2
    l2: float = 0.0
    exclude_crf_from_l2: bool = True

    def __post_init__(self):
        if self.beta < 0 or self.l2 < 0:
            raise ConfigurationError('beta and l2 must be non-negative')


@dataclass
class STLRConfig:
    lr_max: float = 0.01
    cut_frac: float = 0.1
    ratio: float = 32.0

    def __post_init__(self):
        if self.lr_max <= 0 or self.ratio < 1 or not 0 <= self.cut_frac <= 1:
            raise ConfigurationError('STLR needs lr_max > 0, ratio >= 1 and cut_frac in [0, 1]')


@dataclass
class FinetuneSchedule:
    groups: tuple = GROUPS
    epochs_per_stage: int = 2
    factor: float = 1 / 2.6
    stlr: STLRConfig = field(default_factory=STLRConfig)

    def __post_init__(self):
        self.groups = tuple(self.groups)
        unknown = [g for g in self.groups if g not in GROUPS]
        if unknown:
            raise ConfigurationError(f"unknown parameter groups {unknown}; known: {', '.join(GROUPS)}")
        if self.epochs_per_stage < 1:
            raise ConfigurationError('epochs_per_stage must be at least 1')
        if not 0 < self.factor <= 1:
            raise ConfigurationError('discriminative factor must lie in (0, 1]')

    def stage_for_epoch(self, epoch):
        """Stage in force during zero-based ``epoch``."""
        return min(epoch // self.epochs_per_stage, len(self.groups))

    def lr_factor(self, group):
        return self.factor ** self.groups.index(group)


@dataclass
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    seed: int = 7
    adam: AdamConfig = field(default_factory=AdamConfig)
    scheduler: str = 'plateau'
    patience: int = 5
    plateau_factor: float = 0.5
    loss: LossConfig = field(default_factory=LossConfig)
    transfer_mode: TransferMode = TransferMode.NONE
    gradual_unfreezing: bool = False
    schedule: FinetuneSchedule = field(default_factory=FinetuneSchedule)
    target_accuracy: float = None
    loss_sample: int = 200
    metrics_path: str = None
    checkpoint_path: str = None

    def __post_init__(self):
        self.transfer_mode = TransferMode(self.transfer_mode)
        if self.scheduler not in ('plateau', 'stlr', 'constant'):
            raise ConfigurationError(f"unknown scheduler {self.scheduler!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError('epochs and batch_size must be positive')
        if self.loss_sample < 1:
            raise ConfigurationError('loss_sample must be positive')


# =====================================================
# Objective
# =====================================================

def _tensor(value):
    return getattr(value, 'tensor', value)


def regularized_parameters(model, cfg):
    """Trainable tensors that enter the L2 term."""
    return [
        param.tensor for name, param in model.named_parameters()
        if param.trainable and not (cfg.exclude_crf_from_l2 and name.startswith('crf.'))
    ]


def total_loss(primary_nll, secondary_nll, params, cfg):
    """``primary + beta * secondary + l2 * sum(w**2)`` as a scalar tensor."""
    terms = [primary_nll if isinstance(primary_nll, Tensor) else Tensor(primary_nll)]
    if secondary_nll is not None and cfg.beta:
        secondary = secondary_nll if isinstance(secondary_nll, Tensor) else Tensor(secondary_nll)
        terms.append(scale(secondary, cfg.beta))
    if cfg.l2:
        terms.append(scale(squared_l2(_tensor(p) for p in params), cfg.l2))
    return add_n(terms)


# =====================================================
# Adam
# =====================================================

class AdamState:
    def __init__(self):
        self.first = {}
        self.second = {}
        self.steps = {}


def adam_step(params, grads, state, lr, cfg=None):
    """One bias-corrected Adam update in place; frozen parameters are skipped.

    ``lr`` is a float or a mapping from parameter name to learning rate.
    """
    cfg = cfg or AdamConfig()
    for param, grad in zip(params, grads):
        if not param.trainable:
            continue
        value = param.tensor.data
        grad = np.zeros_like(value) if grad is None else np.asarray(grad)
        if grad.shape != value.shape:
            raise DimensionError(f"{param.name}: gradient {grad.shape} vs parameter {value.shape}")
        m = state.first.get(param.name)
        if m is None:
            m = state.first[param.name] = np.zeros_like(value)
            state.second[param.name] = np.zeros_like(value)
            state.steps[param.name] = 0
        elif m.shape != value.shape:
            raise DimensionError(f"{param.name}: optimizer state {m.shape} vs parameter {value.shape}")
        v = state.second[param.name]
        t = state.steps[param.name] = state.steps[param.name] + 1
        m *= cfg.beta1
        m += (1 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        rate = lr[param.name] if isinstance(lr, dict) else lr
        value -= rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


class AdamOptimizer:
    def __init__(self, model, cfg=None, schedule=None):
        self.model = model
        self.cfg = cfg or AdamConfig()
        self.schedule = schedule
        self.state = AdamState()

    def rates(self, lr):
        if self.schedule is None:
            return lr
        return {param.name: lr * self.schedule.lr_factor(param.group) for param in self.model.parameters()}

    def step(self, lr):
        params = self.model.parameters()
        adam_step(params, [p.tensor.grad for p in params], self.state, self.rates(lr), self.cfg)


# =====================================================
# Schedulers
# =====================================================

def stlr(t, total_T, cfg):
    """Slanted triangular learning rate: linear warm-up to ``lr_max`` then linear decay."""
    if total_T <= 0:
        raise ConfigurationError('STLR needs a positive number of steps')
    if not 0 <= t <= total_T:
        raise ConfigurationError(f"step {t} outside 0..{total_T}")
    cut = math.floor(total_T * cfg.cut_frac)
    if t < cut:
        p = t / cut
    elif cut == total_T:
        p = 1.0
    else:
        p = 1 - (t - cut) / (total_T - cut)
    return cfg.lr_max * (1 + p * (cfg.ratio - 1)) / cfg.ratio


class PlateauScheduler:
    """Multiplies the rate by ``factor`` after ``patience`` epochs without a relative improvement."""

    def __init__(self, lr, patience=5, factor=0.5, threshold=1e-4):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric):
        if metric < self.best * (1 - self.threshold):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
            logger.info("dev loss plateaued, learning rate now %.3g", self.lr)
        return self.lr


def gradual_unfreeze(model, schedule, stage):
    """Groups up to ``stage`` in schedule order train, the rest are frozen.

    Returns ``{group: (trainable, lr_factor)}``.
    """
    if not 0 <= stage <= len(schedule.groups):
        raise ConfigurationError(f"stage {stage} outside 0..{len(schedule.groups)}")
    params = model.parameters()
    unknown = sorted({p.group for p in params} - set(schedule.groups))
    if unknown:
        raise ConfigurationError(f"schedule does not name parameter groups {unknown}")
    for param in params:
        param.trainable = schedule.groups.index(param.group) <= stage
    logger.info("unfreeze stage %d: %s trainable", stage, ', '.join(schedule.groups[:stage + 1]))
    return {
        group: (index <= stage, schedule.lr_factor(group))
        for index, group in enumerate(schedule.groups)
    }


def freeze_encoder(model):
    for name, param in model.named_parameters():
        if name.startswith('encoder.'):
            param.trainable = False


# =====================================================
# Evaluation
# =====================================================

def evaluate(model, sentences, loss_cfg=None):
    sentences = list(sentences)
    if not sentences:
        raise InputError('cannot evaluate an empty split')
    loss_cfg = loss_cfg or LossConfig()
    primary = secondary = 0.0
    n_tokens = n_secondary = 0
    gold, pred, gold_seqs, pred_seqs = [], [], [], []
    simplified_gold, simplified_pred = [], []
    cache = {}
    for sentence in sentences:
        p, s, n_s, prediction = model.score_sentence(sentence, cache)
        primary += p
        secondary += s
        n_tokens += len(sentence)
        n_secondary += n_s
        gold.extend(sentence.labels)
        pred.extend(prediction.labels)
        gold_seqs.append(sentence.labels)
        pred_seqs.append(prediction.labels)
        if prediction.simplified is not None:
            for token, label in zip(sentence, prediction.simplified):
                if token.simplified is not None:
                    simplified_gold.append(token.simplified)
                    simplified_pred.append(label)
    loss = primary / n_tokens
    if n_secondary:
        loss += loss_cfg.beta * secondary / n_secondary
    labels = list(model.scheme.labels)
    report = {
        'loss': loss,
        'accuracy': accuracy(gold, pred),
        'weighted_f1': weighted_f1(gold, pred, labels),
        'per_label_f1': per_label_f1(gold, pred, labels),
    }
    if model.scheme.task is Task.LID:
        report['wa_f1'] = wa_f1_from_labels(gold, pred)
    if model.scheme.task is Task.NER:
        report['entity'] = entity_f1(gold_seqs, pred_seqs)
    if simplified_gold:
        report['simplified_accuracy'] = accuracy(simplified_gold, simplified_pred)
    return report


def epochs_to_reach(log, target, key='dev_accuracy'):
    for record in log:
        if record['epoch'] > 0 and record[key] >= target:
            return record['epoch']
    return None


# =====================================================
# Training loop
# =====================================================

@dataclass
class TrainResult:
    model: TaggerModel
    log: list
    best_epoch: int
    best_weighted_f1: float


def _batch_loss(model, batch, cfg):
    primaries, secondaries = [], []
    n_tokens = n_secondary = 0
    # parameters are fixed within a batch; its sentences share word encodings
    cache = {}
    for sentence in batch:
        primary, secondary, n, n_s = model.sentence_losses(sentence, cache)
        primaries.append(primary)
        n_tokens += n
        if secondary is not None:
            secondaries.append(secondary)
            n_secondary += n_s
    primary = scale(add_n(primaries), 1.0 / n_tokens)
    secondary = scale(add_n(secondaries), 1.0 / n_secondary) if secondaries else None
    return total_loss(primary, secondary, regularized_parameters(model, cfg.loss), cfg.loss), n_tokens


def _write_record(path, record):
    with Path(path).open('a', encoding='utf-8') as fh:
        fh.write(json.dumps(record, sort_keys=True) + '\n')


def train(model, corpus, cfg):
    corpus.require('train', 'dev')
    train_split, dev_split = corpus.split('train'), corpus.split('dev')
    rng = np.random.default_rng(cfg.seed)
    unfreezing = cfg.gradual_unfreezing and cfg.transfer_mode is not TransferMode.FROZEN
    optimizer = AdamOptimizer(model, cfg.adam, cfg.schedule if unfreezing else None)
    if cfg.transfer_mode is TransferMode.FROZEN:
        freeze_encoder(model)

    n_batches = math.ceil(len(train_split) / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    plateau = PlateauScheduler(cfg.adam.lr, cfg.patience, cfg.plateau_factor)
    if cfg.metrics_path:
        Path(cfg.metrics_path).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.metrics_path).write_text('', encoding='utf-8')

    def record_for(epoch, lr, train_loss):
        dev = evaluate(model, dev_split, cfg.loss)
        record = {
            'epoch': epoch,
            'lr': lr,
            'train_loss': train_loss,
            'dev_loss': dev['loss'],
            'dev_accuracy': dev['accuracy'],
            'dev_weighted_f1': dev['weighted_f1'],
            'per_label_f1': dev['per_label_f1'],
        }
        if 'simplified_accuracy' in dev:
            record['dev_simplified_accuracy'] = dev['simplified_accuracy']
        if cfg.metrics_path:
            _write_record(cfg.metrics_path, record)
        return record

    # untrained baseline; the train loss is estimated on a fixed prefix of the split
    log = [record_for(0, cfg.adam.lr, evaluate(model, train_split[:cfg.loss_sample], cfg.loss)['loss'])]
    best_f1, best_epoch, best_state = log[0]['dev_weighted_f1'], 0, model.state_dict()
    stage, step, lr = None, 0, cfg.adam.lr

    for epoch in range(1, cfg.epochs + 1):
        if unfreezing:
            wanted = cfg.schedule.stage_for_epoch(epoch - 1)
            if wanted != stage:
                stage = wanted
                gradual_unfreeze(model, cfg.schedule, stage)
        epoch_loss, epoch_tokens = 0.0, 0
        order = rng.permutation(len(train_split))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_split[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grad()
            loss, n_tokens = _batch_loss(model, batch, cfg)
            if not math.isfinite(loss.item()):
                raise NumericalError('train', f"non-finite loss in epoch {epoch}")
            loss.backward()
            if cfg.scheduler == 'stlr':
                lr = stlr(step, total_steps, cfg.schedule.stlr)
            elif cfg.scheduler == 'plateau':
                lr = plateau.lr
            optimizer.step(lr)
            step += 1
            epoch_loss += loss.item() * n_tokens
            epoch_tokens += n_tokens

        record = record_for(epoch, lr, epoch_loss / epoch_tokens)
        log.append(record)
        logger.info(
            "epoch %d: train loss %.4f, dev loss %.4f, dev acc %.4f, dev wF1 %.4f",
            epoch, record['train_loss'], record['dev_loss'], record['dev_accuracy'], record['dev_weighted_f1'])
        if cfg.scheduler == 'plateau':
            plateau.step(record['dev_loss'])
        if record['dev_weighted_f1'] > best_f1:
            best_f1, best_epoch, best_state = record['dev_weighted_f1'], epoch, model.state_dict()
            if cfg.checkpoint_path:
                model.save(cfg.checkpoint_path)
        if cfg.target_accuracy is not None and record['dev_accuracy'] >= cfg.target_accuracy:
            logger.info("dev accuracy target %.3f reached at epoch %d", cfg.target_accuracy, epoch)
            break

    model.load_state_dict(best_state)
    if cfg.checkpoint_path and best_epoch == 0:
        model.save(cfg.checkpoint_path)
    return TrainResult(model=model, log=log, best_epoch=best_epoch, best_weighted_f1=best_f1)


# =====================================================
# Transfer
# =====================================================

def _encoder_state(checkpoint):
    prefix = 'encoder.'
    return {name[len(prefix):]: value for name, value in checkpoint.state.items() if name.startswith(prefix)}


def build_transfer_model(pretrained, corpus, mode, tagger_config=None, static_tables=(), static_paths=()):
    """Tagger for ``corpus`` sharing the pretrained encoder architecture and character vocabulary.

    ``mode`` none keeps the fresh initialisation; frozen and trainable copy the encoder weights.
    """
    mode = TransferMode(mode)
    checkpoint = pretrained if isinstance(pretrained, Checkpoint) else read_checkpoint(pretrained)
    source = TaggerConfig.from_dict(checkpoint.config)
    config = tagger_config or TaggerConfig(encoder=source.encoder, hidden_dim=source.hidden_dim, seed=source.seed)
    theirs, ours = source.encoder.to_dict(), config.encoder.to_dict()
    differing = sorted(key for key in ours if key != 'char_vocab_size' and ours[key] != theirs.get(key))
    if differing:
        raise LoadError(f"encoder config differs from the pretrained one in: {', '.join(differing)}")
    vocabulary = CharVocabulary(checkpoint.metadata['vocabulary'])
    model = TaggerModel(config, corpus.scheme, vocabulary, static_tables=static_tables, static_paths=static_paths)
    if mode is not TransferMode.NONE:
        model.encoder.load_state_dict(_encoder_state(checkpoint))
        logger.info("encoder weights loaded for %s transfer", mode.value)
    if mode is TransferMode.FROZEN:
        freeze_encoder(model)
    return model


def transfer(pretrained, corpus, mode, cfg, tagger_config=None, static_tables=(), static_paths=()):
    cfg.transfer_mode = TransferMode(mode)
    model = build_transfer_model(pretrained, corpus, mode, tagger_config, static_tables, static_paths)
    return train(model, corpus, cfg)


# =====================================================
# Position-shuffle analysis
# =====================================================

def position_shuffle_analysis(model, sentences, seed):
    """Compares a model with its shuffled-position view on the same sentences.

    With the secondary head on, accuracy is simplified-LID accuracy and
    ``probability_gap`` the mean drop in probability of the gold simplified
    label; otherwise primary-label accuracy is compared.
    """
    sentences = list(sentences)
    if not sentences:
        raise InputError('no sentences to analyse')
    shuffled = shuffle_positions(model, seed)
    secondary = model.flags.use_secondary
    gold, plain, mixed, gaps = [], [], [], []
    for sentence in sentences:
        a = model.predict(sentence.surfaces)
        b = shuffled.predict(sentence.surfaces)
        if not secondary:
            gold.extend(sentence.labels)
            plain.extend(a.labels)
            mixed.extend(b.labels)
            continue
        for i, token in enumerate(sentence):
            if token.simplified is None:
                continue
            target = SIMPLIFIED_LABELS.index(token.simplified)
            gold.append(token.simplified)
            plain.append(a.simplified[i])
            mixed.append(b.simplified[i])
            gaps.append(a.secondary_probs[i][target] - b.secondary_probs[i][target])
    report = {
        'target': 'simplified' if secondary else 'primary',
        'accuracy': accuracy(gold, plain),
        'shuffled_accuracy': accuracy(gold, mixed),
    }
    if gaps:
        report['probability_gap'] = float(np.mean(gaps))
    return report
