"""Resolved run parameters: defaults, then a key=value file, then command-line flags."""
import logging
from collections import namedtuple
from pathlib import Path

from decouple import Choices, Config, Csv, RepositoryEmpty, RepositoryEnv
from django.conf import settings

from .encoder import EncoderConfig, PoolingMode
from .exceptions import ConfigurationError
from .schemes import LabelScheme, Task, scheme_for
from .tagger import EXPERIMENTS, TaggerConfig, TaggerFlags
from .train import AdamConfig, FinetuneSchedule, LossConfig, STLRConfig, TrainConfig, TransferMode

logger = logging.getLogger(__name__)

RUN_CONFIG_NAME = 'run.cfg'

Option = namedtuple('Option', 'default cast')


def channel_map(value):
    """``1:32,2:32,3:64`` -> ``{1: 32, 2: 32, 3: 64}``."""
    if isinstance(value, dict):
        return {int(k): int(v) for k, v in value.items()}
    channels = {}
    for item in Csv()(value):
        order, sep, count = item.partition(':')
        if not sep:
            raise ValueError(f"expected order:channels, got {item!r}")
        channels[int(order)] = int(count)
    return channels


def optional_float(value):
    if value is None or value == '':
        return None
    return float(value)


def optional_str(value):
    return value or None


def _choices(enum):
    return Choices(flat=[member.value for member in enum])


OPTIONS = {
    'seed': Option(None, int),

    'encoder.char_emb_dim': Option(16, int),
    'encoder.orders': Option('1,2,3', Csv(cast=int)),
    'encoder.channels': Option('1:32,2:32,3:64', channel_map),
    'encoder.max_word_len': Option(50, int),
    'encoder.attention_dim': Option(64, int),
    'encoder.pooling': Option(PoolingMode.POS_HIER_ATTN.value, _choices(PoolingMode)),
    'encoder.token_dim': Option(128, int),
    'encoder.highway': Option(True, bool),
    'encoder.context_layers': Option(0, int),
    'encoder.position_init': Option(0.05, float),

    'tagger.task': Option(Task.LID.value, _choices(Task)),
    'tagger.experiment': Option('', Choices(flat=[''] + sorted(EXPERIMENTS))),
    'tagger.hidden_dim': Option(64, int),
    'tagger.concat_ngram_to_crf': Option(False, bool),
    'tagger.use_secondary': Option(False, bool),
    'tagger.use_static': Option(False, bool),
    'tagger.scheme_file': Option('', optional_str),

    'train.epochs': Option(50, int),
    'train.batch_size': Option(8, int),
    'train.lr': Option(0.001, float),
    'train.scheduler': Option('plateau', Choices(flat=['plateau', 'stlr', 'constant'])),
    'train.patience': Option(5, int),
    'train.plateau_factor': Option(0.5, float),
    'train.beta': Option(0.2, float),
    'train.l2': Option(0.0, float),
    'train.exclude_crf_from_l2': Option(True, bool),
    'train.transfer': Option(TransferMode.NONE.value, _choices(TransferMode)),
    'train.gradual_unfreezing': Option(False, bool),
    'train.epochs_per_stage': Option(2, int),
    'train.discriminative_factor': Option(1 / 2.6, float),
    'train.stlr_lr_max': Option(0.01, float),
    'train.stlr_cut_frac': Option(0.1, float),
    'train.stlr_ratio': Option(32.0, float),
    'train.target_accuracy': Option('', optional_float),
    'train.loss_sample': Option(200, int),

    'data.dir': Option('', optional_str),
    'data.embeddings': Option('', Csv()),
    'data.repair_bio': Option(False, bool),

    'paths.output_dir': Option(None, str),
}


def _settings_defaults():
    return {
        'seed': getattr(settings, 'MORPHTAG_SEED', 7),
        'paths.output_dir': str(getattr(settings, 'MORPHTAG_OUTPUT_DIR', 'runs')),
    }


def _render(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, dict):
        return ','.join(f"{k}:{v}" for k, v in sorted(value.items()))
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    return str(value)


def encoder_values(encoder):
    """``encoder.*`` keys as :meth:`RunConfig.resolve` would cast them for ``encoder``."""
    return {
        'encoder.char_emb_dim': encoder.char_emb_dim,
        'encoder.orders': list(encoder.orders),
        'encoder.channels': dict(encoder.channels),
        'encoder.max_word_len': encoder.max_word_len,
        'encoder.attention_dim': encoder.attention_dim,
        'encoder.pooling': encoder.pooling_mode.value,
        'encoder.token_dim': encoder.token_dim,
        'encoder.highway': encoder.highway,
        'encoder.context_layers': encoder.context_layers,
        'encoder.position_init': encoder.position_init,
    }


class RunConfig:
    def __init__(self, values):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    @staticmethod
    def cast(key, raw):
        try:
            option = OPTIONS[key]
        except KeyError:
            raise ConfigurationError(f"unknown config key {key!r}") from None
        if raw is None:
            return None
        try:
            return Config(RepositoryEmpty())(key, default=raw if isinstance(raw, str) else _render(raw),
                                            cast=option.cast)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from exc

    @classmethod
    def resolve(cls, path=None, overrides=None):
        """``overrides`` maps keys to raw strings or typed values; ``None`` entries are ignored."""
        values = {}
        for key, option in OPTIONS.items():
            values[key] = cls.cast(key, option.default) if option.default is not None else None
        for key, value in _settings_defaults().items():
            values[key] = cls.cast(key, value)

        from_file = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigurationError(f"config file {path} does not exist")
            repository = RepositoryEnv(str(path))
            unknown = sorted(set(repository.data) - set(OPTIONS))
            if unknown:
                raise ConfigurationError(f"unknown config keys in {path}: {', '.join(unknown)}")
            from_file = {key: cls.cast(key, repository.data[key]) for key in repository.data}

        from_flags = {key: cls.cast(key, raw) for key, raw in (overrides or {}).items() if raw is not None}

        experiment = from_flags.get('tagger.experiment', from_file.get('tagger.experiment', ''))
        if experiment:
            mode, flags = EXPERIMENTS[experiment]
            values['encoder.pooling'] = mode.value
            for name, flag in flags.to_dict().items():
                values[f"tagger.{name}"] = flag
        values.update(from_file)
        values.update(from_flags)
        config = cls(values)
        logger.debug("resolved run config: %s", config.values)
        return config

    def dump(self):
        return ''.join(f"{key}={_render(self.values[key])}\n" for key in sorted(self.values))

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RUN_CONFIG_NAME
        path.write_text(self.dump(), encoding='utf-8')
        return path

    # --- typed views ---

    @property
    def output_dir(self):
        return Path(self['paths.output_dir'])

    @property
    def task(self):
        return Task(self['tagger.task'])

    def scheme(self):
        if self['tagger.scheme_file']:
            return LabelScheme.from_file(self['tagger.scheme_file'], self.task)
        return scheme_for(self.task)

    def encoder_config(self):
        orders = tuple(self['encoder.orders'])
        channels = self['encoder.channels']
        return EncoderConfig(
            char_emb_dim=self['encoder.char_emb_dim'],
            orders=orders,
            channels={j: channels[j] for j in orders if j in channels},
            max_word_len=self['encoder.max_word_len'],
            attention_dim=self['encoder.attention_dim'],
            pooling_mode=PoolingMode(self['encoder.pooling']),
            token_dim=self['encoder.token_dim'],
            highway=self['encoder.highway'],
            context_layers=self['encoder.context_layers'],
            position_init=self['encoder.position_init'],
        )

    def encoder_conflicts(self, encoder, keys):
        """Those of ``keys`` whose resolved value differs from ``encoder``."""
        return [key for key in sorted(keys) if self[key] != encoder_values(encoder)[key]]

    def tagger_flags(self):
        return TaggerFlags(
            concat_ngram_to_crf=self['tagger.concat_ngram_to_crf'],
            use_secondary=self['tagger.use_secondary'],
            use_static=self['tagger.use_static'],
        )

    def tagger_config(self):
        return TaggerConfig(
            encoder=self.encoder_config(),
            hidden_dim=self['tagger.hidden_dim'],
            flags=self.tagger_flags(),
            seed=self['seed'],
        )

    def loss_config(self):
        return LossConfig(
            beta=self['train.beta'],
            l2=self['train.l2'],
            exclude_crf_from_l2=self['train.exclude_crf_from_l2'],
        )

    def schedule(self):
        return FinetuneSchedule(
            epochs_per_stage=self['train.epochs_per_stage'],
            factor=self['train.discriminative_factor'],
            stlr=STLRConfig(
                lr_max=self['train.stlr_lr_max'],
                cut_frac=self['train.stlr_cut_frac'],
                ratio=self['train.stlr_ratio'],
            ),
        )

    def train_config(self, metrics_path=None, checkpoint_path=None):
        return TrainConfig(
            epochs=self['train.epochs'],
            batch_size=self['train.batch_size'],
            seed=self['seed'],
            adam=AdamConfig(lr=self['train.lr']),
            scheduler=self['train.scheduler'],
            patience=self['train.patience'],
            plateau_factor=self['train.plateau_factor'],
            loss=self.loss_config(),
            transfer_mode=TransferMode(self['train.transfer']),
            gradual_unfreezing=self['train.gradual_unfreezing'],
            schedule=self.schedule(),
            target_accuracy=self['train.target_accuracy'],
            loss_sample=self['train.loss_sample'],
            metrics_path=None if metrics_path is None else str(metrics_path),
            checkpoint_path=None if checkpoint_path is None else str(checkpoint_path),
        )
