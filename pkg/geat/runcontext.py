""" Collection of all configurable objects of a geat run.

The center is the `RunContext`, built from one json config with the sections
`synth`, `tokenizer`, `model`, `train`, `rank` and `cluster`.
"""

from .cluster import ClusterConfig
from .configurable import ConfigMeta
from .corpus import make_synthetic
from .errors import ConfigError
from .model import ModelConfig
from .rank import RankConfig
from .tokenize import DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE
from .train import TrainConfig


class SynthConfig(metaclass=ConfigMeta):
    """ Parameters of the synthetic datasets with planted lab motifs.
    """
    config_options = dict(
        n_labs = (50,
            'number of labs'),
        per_lab = (40,
            'number of sequences per lab'),
        motif_len = (24,
            'length of the motif that every lab plants in its sequences'),
        seq_len = (600,
            'length of every sequence'),
        noise = (0.02,
            'probability of a random substitution per base'),
        seed = (1,
            'seed for motifs and sequences'),
    )

    def __init__(self, config=None):
        self.configure(config)

    def generate(self):
        return make_synthetic(self.n_labs, self.per_lab, self.motif_len, self.seq_len, self.noise, self.seed)


class TokenizerConfig(metaclass=ConfigMeta):
    config_options = dict(
        vocab_size = (DEFAULT_VOCAB_SIZE,
            'target vocabulary size of the BPE training, including the '
            'padding token and the 5 base tokens'),
        max_len = (DEFAULT_MAX_LEN,
            'number of tokens per sequence that the models see'),
    )

    def __init__(self, config=None):
        self.configure(config)
        if not isinstance(self.max_len, int) or self.max_len < 1:
            raise ConfigError(f"max_len must be a positive integer, got {self.max_len}")


# model options that are not configured in the model section: they follow
# from the tokenizer section, the training data, or the training margin
DERIVED_MODEL_OPTIONS = ('vocab_size', 'max_len', 'feature_count', 'lab_count', 'margin')


class RunContext:
    """ An instance of the Context pattern that collects the configuration
    objects of all geat components.
    """

    def __init__(self, config=None):
        if config is None:
            config = dict()
        unknown = set(config.keys()) - set(self.get_default_config().keys())
        if len(unknown) > 0:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

        self.synth_cfg = SynthConfig(config.get('synth', {}))
        self.tokenizer_cfg = TokenizerConfig(config.get('tokenizer', {}))
        self.train_cfg = TrainConfig(config.get('train', {}))
        self.rank_cfg = RankConfig(config.get('rank', {}))
        self.cluster_cfg = ClusterConfig(config.get('cluster', {}))

        model_config = dict(config.get('model', {}))
        for k in DERIVED_MODEL_OPTIONS:
            if k in model_config:
                raise ConfigError(f"model option '{k}' cannot be configured directly")
        model_config['vocab_size'] = self.tokenizer_cfg.vocab_size
        model_config['max_len'] = self.tokenizer_cfg.max_len
        model_config['margin'] = self.train_cfg.margin
        self.model_cfg = ModelConfig(model_config)

    @staticmethod
    def _model_section(cfg_dict):
        return {k: v for k, v in cfg_dict.items() if k.split('.')[0] not in DERIVED_MODEL_OPTIONS}

    @staticmethod
    def get_default_config():
        res = dict()
        res['synth'] = SynthConfig.get_default_config()
        res['tokenizer'] = TokenizerConfig.get_default_config()
        res['model'] = RunContext._model_section(ModelConfig.get_default_config())
        res['train'] = TrainConfig.get_default_config()
        res['rank'] = RankConfig.get_default_config()
        res['cluster'] = ClusterConfig.get_default_config()
        return res

    def get_config(self, skip_doc=False):
        res = dict()
        res['synth'] = self.synth_cfg.get_config(skip_doc=skip_doc)
        res['tokenizer'] = self.tokenizer_cfg.get_config(skip_doc=skip_doc)
        res['model'] = self._model_section(self.model_cfg.get_config(skip_doc=skip_doc))
        res['train'] = self.train_cfg.get_config(skip_doc=skip_doc)
        res['rank'] = self.rank_cfg.get_config(skip_doc=skip_doc)
        res['cluster'] = self.cluster_cfg.get_config(skip_doc=skip_doc)
        return res
