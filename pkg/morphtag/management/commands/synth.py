import dataclasses
from pathlib import Path

from django.conf import settings

from morphtag.data import dataset_stats
from morphtag.management.base import MorphtagCommand, write_json
from morphtag.synthetic import SyntheticSpec, generate_synthetic, spec_from_file, spec_to_text


class Command(MorphtagCommand):
    help = 'Generates a synthetic code-switched corpus (train/dev/test CoNLL files plus stats.json)'

    def add_arguments(self, parser):
        parser.add_argument('--spec', help='key=value synthetic spec file; the demo spec when omitted')
        parser.add_argument('--out', help='output directory')
        parser.add_argument('--task', choices=['lid', 'pos'])
        parser.add_argument('--seed', type=int)
        parser.add_argument('--sentences', type=int)
        parser.add_argument('--switch-prob', type=float)

    def run(self, **options):
        spec = spec_from_file(options['spec']) if options.get('spec') else SyntheticSpec()
        changes = {
            'task': options.get('task'),
            'seed': options.get('seed'),
            'sentences': options.get('sentences'),
            'switch_prob': options.get('switch_prob'),
        }
        changes = {key: value for key, value in changes.items() if value is not None}
        if changes:
            spec = dataclasses.replace(spec, **changes)

        out = Path(options.get('out') or Path(settings.MORPHTAG_OUTPUT_DIR) / 'synthetic')
        corpus = generate_synthetic(spec)
        paths = corpus.write(out)
        stats = dataset_stats(corpus)
        write_json(out / 'stats.json', stats)
        (out / 'spec.cfg').write_text(spec_to_text(spec), encoding='utf-8')

        self.stdout.write(self.style.SUCCESS(f'Synthetic {spec.task.value} corpus written to {out}'))
        for path in paths:
            name = path.stem
            self.stdout.write(f'  {name}: {stats["splits"][name]["sentences"]} sentences, '
                              f'{stats["splits"][name]["tokens"]} tokens')
        cmi = stats['total'].get('cmi')
        if cmi is not None:
            self.stdout.write(f'  code-switched utterances: {cmi["code_switched"]}, CMI-all {cmi["cmi_all"]:.3f}')
