from morphtag.exceptions import ConfigurationError
from morphtag.management.base import MorphtagCommand, parse_assignments
from morphtag.management.commands.train import METRICS_NAME, report_training
from morphtag.serialization import parameter_checksum, read_checkpoint
from morphtag.tagger import TaggerConfig, default_checkpoint_name
from morphtag.train import TransferMode, transfer


class Command(MorphtagCommand):
    help = 'Trains a tagger for a new task on top of a pretrained encoder (none / frozen / trainable)'

    def add_arguments(self, parser):
        parser.add_argument('--pretrained', required=True, help='checkpoint whose encoder is transferred')
        parser.add_argument('--transfer', choices=[mode.value for mode in TransferMode],
                            help='none: fresh encoder; frozen: copied and fixed; trainable: copied and tuned')
        self.add_run_arguments(parser)
        self.add_model_arguments(parser)

    def explicit_encoder_keys(self, options):
        keys = {key for key in parse_assignments(options.get('set')) if key.startswith('encoder.')}
        if options.get('pooling') or options.get('experiment'):
            keys.add('encoder.pooling')
        return keys

    def run(self, **options):
        run_config = self.resolve_config(options)
        checkpoint = read_checkpoint(options['pretrained'])
        source = TaggerConfig.from_dict(checkpoint.config)
        # the encoder architecture always comes from the checkpoint
        conflicts = run_config.encoder_conflicts(source.encoder, self.explicit_encoder_keys(options))
        if conflicts:
            raise ConfigurationError(
                f"{', '.join(conflicts)} differ from the pretrained encoder in {options['pretrained']}")

        corpus = self.load_corpus(run_config)
        corpus.require('train', 'dev')
        tables, paths = self.load_static_tables(run_config)

        out = run_config.output_dir
        run_config.write(out)
        mode = TransferMode(run_config['train.transfer'])
        tagger_config = TaggerConfig(
            encoder=source.encoder,
            hidden_dim=run_config['tagger.hidden_dim'],
            flags=run_config.tagger_flags(),
            seed=run_config['seed'],
        )
        cfg = run_config.train_config(out / METRICS_NAME, default_checkpoint_name(out))
        self.stdout.write(f'Transfer ({mode.value}) from {options["pretrained"]} to {run_config.task.value}')
        result = transfer(checkpoint, corpus, mode, cfg, tagger_config, static_tables=tables, static_paths=paths)

        before = parameter_checksum(checkpoint.state, 'encoder.')
        after = parameter_checksum(result.model.state_dict(), 'encoder.')
        self.stdout.write(f'Encoder checksum {before[:12]} -> {after[:12]}')
        report_training(self, result, corpus, cfg, out)
