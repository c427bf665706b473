"""Options and error handling shared by the morphtag management commands."""
import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from morphtag.data import Corpus, check_bio, load_embeddings
from morphtag.encoder import PoolingMode
from morphtag.exceptions import MorphtagError, NumericalError
from morphtag.runconfig import RunConfig
from morphtag.tagger import EXPERIMENTS, TaggerModel

logger = logging.getLogger('morphtag.commands')

EXIT_INPUT = 2
EXIT_NUMERIC = 3


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def parse_assignments(pairs):
    overrides = {}
    for pair in pairs or ():
        key, sep, value = pair.partition('=')
        if not sep:
            raise CommandError(f"--set expects key=value, got {pair!r}", returncode=EXIT_INPUT)
        overrides[key.strip()] = value.strip()
    return overrides


class MorphtagCommand(BaseCommand):
    """Runs :meth:`run` and maps toolkit errors onto exit codes 2 and 3."""

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except NumericalError as exc:
            logger.error("numerical failure in %s", exc.operation)
            raise CommandError(str(exc), returncode=EXIT_NUMERIC) from exc
        except (MorphtagError, OSError) as exc:
            raise CommandError(str(exc), returncode=EXIT_INPUT) from exc

    def run(self, **options):
        raise NotImplementedError

    # --- options ---

    def add_run_arguments(self, parser):
        parser.add_argument('--config', help='key=value run config file')
        parser.add_argument('--set', action='append', metavar='KEY=VALUE', help='override any config key')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--output-dir')

    def add_model_arguments(self, parser):
        parser.add_argument('--data', help='directory holding train/dev/test.conll')
        parser.add_argument('--task', choices=['lid', 'pos', 'ner'])
        parser.add_argument('--experiment', choices=sorted(EXPERIMENTS))
        parser.add_argument('--pooling', choices=[mode.value for mode in PoolingMode])
        parser.add_argument('--concat', dest='concat', action='store_true', default=None,
                            help='concatenate the enhanced n-gram representation to the CRF input')
        parser.add_argument('--no-concat', dest='concat', action='store_false')
        parser.add_argument('--secondary', dest='secondary', action='store_true', default=None)
        parser.add_argument('--no-secondary', dest='secondary', action='store_false')
        parser.add_argument('--static', dest='static', action='store_true', default=None)
        parser.add_argument('--no-static', dest='static', action='store_false')
        parser.add_argument('--embeddings', help='comma-separated static embedding files')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--lr', type=float)
        parser.add_argument('--beta', type=float)
        parser.add_argument('--l2', type=float)
        parser.add_argument('--scheduler', choices=['plateau', 'stlr', 'constant'])
        parser.add_argument('--unfreeze', dest='unfreeze', action='store_true', default=None,
                            help='gradual unfreezing with discriminative learning rates')
        parser.add_argument('--target-accuracy', type=float)

    def resolve_config(self, options):
        overrides = parse_assignments(options.get('set'))
        flags = {
            'seed': options.get('seed'),
            'paths.output_dir': options.get('output_dir'),
            'data.dir': options.get('data'),
            'data.embeddings': options.get('embeddings'),
            'tagger.task': options.get('task'),
            'tagger.experiment': options.get('experiment'),
            'encoder.pooling': options.get('pooling'),
            'tagger.concat_ngram_to_crf': options.get('concat'),
            'tagger.use_secondary': options.get('secondary'),
            'tagger.use_static': options.get('static'),
            'train.epochs': options.get('epochs'),
            'train.batch_size': options.get('batch_size'),
            'train.lr': options.get('lr'),
            'train.beta': options.get('beta'),
            'train.l2': options.get('l2'),
            'train.scheduler': options.get('scheduler'),
            'train.gradual_unfreezing': options.get('unfreeze'),
            'train.target_accuracy': options.get('target_accuracy'),
        }
        if options.get('transfer'):
            flags['train.transfer'] = options['transfer']
        overrides.update({key: value for key, value in flags.items() if value is not None})
        return RunConfig.resolve(options.get('config'), overrides)

    # --- inputs ---

    def load_corpus(self, run_config):
        if not run_config['data.dir']:
            raise CommandError('no corpus given; pass --data or set data.dir', returncode=EXIT_INPUT)
        corpus = Corpus.from_directory(run_config['data.dir'], run_config.scheme())
        if run_config.task.value == 'ner':
            for name, sentences in corpus.splits.items():
                corpus.splits[name], _ = check_bio(sentences, repair=run_config['data.repair_bio'])
        logger.info("%s corpus from %s: %s", run_config.task.value, run_config['data.dir'],
                    ', '.join(f"{name}={len(s)}" for name, s in corpus.splits.items()))
        return corpus

    def load_static_tables(self, run_config):
        if not run_config['tagger.use_static']:
            return [], []
        paths = run_config['data.embeddings']
        return [load_embeddings(p) for p in paths], paths

    def load_model(self, checkpoint, embeddings=None):
        tables = [load_embeddings(p) for p in embeddings.split(',')] if embeddings else None
        return TaggerModel.load(checkpoint, static_tables=tables)

