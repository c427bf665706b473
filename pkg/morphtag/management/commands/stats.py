from pathlib import Path

from django.conf import settings

from morphtag.data import Corpus, dataset_stats, parse_conll
from morphtag.management.base import MorphtagCommand, write_json
from morphtag.schemes import LabelScheme, scheme_for


class Command(MorphtagCommand):
    help = 'Label distributions, utterance classes and code-mixing indices of a corpus'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='CoNLL file or directory of split files')
        parser.add_argument('--task', choices=['lid', 'pos', 'ner'], default='lid')
        parser.add_argument('--scheme-file', help='one label per line')
        parser.add_argument('--out', help='stats JSON file')

    def run(self, **options):
        scheme = LabelScheme.from_file(options['scheme_file'], options['task']) \
            if options.get('scheme_file') else scheme_for(options['task'])
        data = Path(options['data'])
        if data.is_dir():
            corpus = Corpus.from_directory(data, scheme)
        else:
            corpus = Corpus(scheme.task, scheme, {data.stem: parse_conll(data, scheme)})
        report = dataset_stats(corpus)

        out = Path(options.get('out') or Path(settings.MORPHTAG_OUTPUT_DIR) / f'{data.stem}.stats.json')
        write_json(out, report)
        total = report['total']
        self.stdout.write(self.style.SUCCESS(f'Stats written to {out}'))
        self.stdout.write(f'{total["sentences"]} sentences, {total["tokens"]} tokens')
        if 'cmi' in total:
            cmi = total['cmi']
            self.stdout.write(f'code-switched {cmi["code_switched"]}, CMI-all {cmi["cmi_all"]:.3f}, '
                              f'CMI-mixed {cmi["cmi_mixed"]:.3f}')
