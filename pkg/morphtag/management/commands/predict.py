from pathlib import Path

from django.conf import settings

from morphtag.data import read_token_file
from morphtag.management.base import MorphtagCommand
from morphtag.tagger import write_predictions


class Command(MorphtagCommand):
    help = 'Tags a token-per-line file and writes token, label and simplified-label columns'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--input', required=True, help='one token per line, blank line between sentences')
        parser.add_argument('--out', help='prediction file (CoNLL columns)')
        parser.add_argument('--embeddings', help='comma-separated static embedding files')

    def run(self, **options):
        model = self.load_model(options['checkpoint'], options.get('embeddings'))
        sentences = read_token_file(options['input'])
        predictions = [model.predict(words) for words in sentences]

        out = Path(options.get('out') or Path(settings.MORPHTAG_OUTPUT_DIR) / f"{Path(options['input']).stem}.pred")
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open('w', encoding='utf-8') as fh:
            write_predictions(fh, sentences, predictions)
        tokens = sum(len(words) for words in sentences)
        self.stdout.write(self.style.SUCCESS(f'Tagged {len(sentences)} sentences ({tokens} tokens) into {out}'))
