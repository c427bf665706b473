from pathlib import Path

from django.conf import settings

from morphtag.data import kfold_splits, parse_conll, serialize_conll
from morphtag.management.base import MorphtagCommand
from morphtag.schemes import LabelScheme, scheme_for


class Command(MorphtagCommand):
    help = 'Splits a CoNLL file into k train/test folds'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True)
        parser.add_argument('--k', type=int, default=5)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--task', choices=['lid', 'pos', 'ner'], default='pos')
        parser.add_argument('--scheme-file')
        parser.add_argument('--out', help='directory receiving fold1/ .. foldk/')

    def run(self, **options):
        scheme = LabelScheme.from_file(options['scheme_file'], options['task']) \
            if options.get('scheme_file') else scheme_for(options['task'])
        seed = settings.MORPHTAG_SEED if options.get('seed') is None else options['seed']
        sentences = parse_conll(options['data'], scheme)
        out = Path(options.get('out') or Path(settings.MORPHTAG_OUTPUT_DIR) / 'folds')

        for number, (train, test) in enumerate(kfold_splits(sentences, options['k'], seed), 1):
            fold = out / f'fold{number}'
            fold.mkdir(parents=True, exist_ok=True)
            (fold / 'train.conll').write_text(serialize_conll(train, scheme), encoding='utf-8')
            (fold / 'test.conll').write_text(serialize_conll(test, scheme), encoding='utf-8')
            self.stdout.write(f'  fold {number}: {len(train)} train / {len(test)} test sentences')
        self.stdout.write(self.style.SUCCESS(f'{options["k"]} folds written to {out}'))
