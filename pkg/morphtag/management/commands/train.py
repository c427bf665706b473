from morphtag.management.base import MorphtagCommand, write_json
from morphtag.tagger import TaggerModel, default_checkpoint_name
from morphtag.train import evaluate, train

METRICS_NAME = 'metrics.jsonl'


class Command(MorphtagCommand):
    help = 'Trains a BiLSTM-CRF tagger over the character n-gram encoder'

    def add_arguments(self, parser):
        self.add_run_arguments(parser)
        self.add_model_arguments(parser)

    def run(self, **options):
        run_config = self.resolve_config(options)
        corpus = self.load_corpus(run_config)
        corpus.require('train', 'dev')
        tables, paths = self.load_static_tables(run_config)

        out = run_config.output_dir
        run_config.write(out)
        model = TaggerModel(
            run_config.tagger_config(), corpus.scheme, corpus.character_vocabulary(),
            static_tables=tables, static_paths=paths,
        )
        cfg = run_config.train_config(out / METRICS_NAME, default_checkpoint_name(out))
        self.stdout.write(f'Training {run_config.task.value} tagger '
                          f'({run_config["encoder.pooling"]}, {cfg.epochs} epochs) into {out}')
        result = train(model, corpus, cfg)
        report_training(self, result, corpus, cfg, out)


def report_training(command, result, corpus, cfg, out):
    summary = {'best_epoch': result.best_epoch, 'best_dev_weighted_f1': result.best_weighted_f1}
    if corpus.splits.get('test'):
        summary['test'] = evaluate(result.model, corpus.split('test'), cfg.loss)
    write_json(out / 'summary.json', summary)
    command.stdout.write(command.style.SUCCESS(
        f'Best dev weighted F1 {result.best_weighted_f1:.4f} at epoch {result.best_epoch}'))
    if 'test' in summary:
        command.stdout.write(f'Test accuracy {summary["test"]["accuracy"]:.4f}, '
                             f'weighted F1 {summary["test"]["weighted_f1"]:.4f}')
