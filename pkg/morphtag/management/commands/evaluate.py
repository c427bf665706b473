from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from morphtag.data import parse_conll
from morphtag.management.base import EXIT_INPUT, MorphtagCommand, write_json
from morphtag.metrics import accuracy, entity_f1, per_label_f1, wa_f1_from_labels, weighted_f1
from morphtag.schemes import Task, scheme_for
from morphtag.train import evaluate


def gold_report(sentences, scheme):
    """Metrics of the gold labels scored against themselves."""
    gold = [label for sentence in sentences for label in sentence.labels]
    labels = list(scheme.labels)
    report = {
        'accuracy': accuracy(gold, gold),
        'weighted_f1': weighted_f1(gold, gold, labels),
        'per_label_f1': per_label_f1(gold, gold, labels),
    }
    if scheme.task is Task.LID:
        report['wa_f1'] = wa_f1_from_labels(gold, gold)
    if scheme.task is Task.NER:
        sequences = [sentence.labels for sentence in sentences]
        report['entity'] = entity_f1(sequences, sequences)
    return report


class Command(MorphtagCommand):
    help = 'Scores a checkpoint on a CoNLL file (weighted F1, per-label F1, WA-F1, entity F1)'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', help='morphtag-v1 model file')
        parser.add_argument('--data', required=True, help='CoNLL file to score')
        parser.add_argument('--out', help='metrics JSON file')
        parser.add_argument('--embeddings', help='comma-separated static embedding files')
        parser.add_argument('--task', choices=['lid', 'pos', 'ner'], default='lid',
                            help='label scheme for --gold-as-pred')
        parser.add_argument('--gold-as-pred', action='store_true', help='score the gold labels against themselves')

    def run(self, **options):
        if options['gold_as_pred']:
            scheme = scheme_for(options['task'])
            report = gold_report(parse_conll(options['data'], scheme), scheme)
        else:
            if not options.get('checkpoint'):
                raise CommandError('--checkpoint is required unless --gold-as-pred is given', returncode=EXIT_INPUT)
            model = self.load_model(options['checkpoint'], options.get('embeddings'))
            report = evaluate(model, parse_conll(options['data'], model.scheme))

        out = Path(options.get('out') or Path(settings.MORPHTAG_OUTPUT_DIR) / f"{Path(options['data']).stem}.eval.json")
        write_json(out, report)
        self.stdout.write(self.style.SUCCESS(f'Metrics written to {out}'))
        self.stdout.write(f'accuracy {report["accuracy"]:.4f}  weighted F1 {report["weighted_f1"]:.4f}')
        if 'wa_f1' in report:
            self.stdout.write(f'WA-F1 {report["wa_f1"]:.4f}')
        if 'entity' in report:
            self.stdout.write(f'entity F1 {report["entity"]["f1"]:.4f}')
