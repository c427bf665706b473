import json
from pathlib import Path

from django.conf import settings

from morphtag.data import parse_conll
from morphtag.encoder import attention_position_profile, shuffle_positions
from morphtag.exceptions import ModeError
from morphtag.management.base import MorphtagCommand, write_json
from morphtag.train import position_shuffle_analysis


class Command(MorphtagCommand):
    help = 'Exports per-token n-gram attention weights as JSON lines'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--data', required=True, help='CoNLL file whose tokens are traced')
        parser.add_argument('--out', help='JSON-lines trace file')
        parser.add_argument('--embeddings', help='comma-separated static embedding files')
        parser.add_argument('--shuffle-positions', type=int, metavar='SEED',
                            help='trace with position rows drawn at random')
        parser.add_argument('--profile', action='store_true',
                            help='also write first/inner/last attention mass per order and the shuffle comparison')

    def run(self, **options):
        model = self.load_model(options['checkpoint'], options.get('embeddings'))
        if not model.encoder.config.pooling_mode.attentive:
            raise ModeError('max-pool models have no attention to export')
        sentences = parse_conll(options['data'], model.scheme)
        seed = options.get('shuffle_positions')
        tagger = model if seed is None else shuffle_positions(model, seed)

        out = Path(options.get('out') or Path(settings.MORPHTAG_OUTPUT_DIR) / 'attention.jsonl')
        out.parent.mkdir(parents=True, exist_ok=True)
        traces = []
        with out.open('w', encoding='utf-8') as fh:
            for s_index, sentence in enumerate(sentences):
                prediction = tagger.predict(sentence.surfaces)
                for t_index, (token, trace) in enumerate(zip(sentence, prediction.traces)):
                    traces.append(trace)
                    for record in trace.records(pred=prediction.labels[t_index], gold=token.label,
                                                sentence=s_index, token=t_index):
                        fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + '\n')
        self.stdout.write(self.style.SUCCESS(f'{len(traces)} token traces written to {out}'))

        if options['profile']:
            profile = {
                'positions': {str(order): value for order, value in attention_position_profile(traces).items()},
            }
            if model.encoder.config.pooling_mode.positional:
                profile['shuffle'] = position_shuffle_analysis(model, sentences, 0 if seed is None else seed)
            path = write_json(out.with_suffix('.profile.json'), profile)
            self.stdout.write(f'Position profile written to {path}')
