""" Declarative configuration objects and their json representation.

A configurable class declares its options together with default values and a
short documentation string:

    class Foo(metaclass=ConfigMeta):
        config_options = dict(
            bar = (42, 'the number of bars'),
        )

        def __init__(self, config):
            self.configure(config)

Afterwards, `Foo({'bar': 3}).bar == 3` and `Foo({}).bar == 42`. Config dicts
may carry documentation entries of the form `"bar.doc": "..."`, these are
ignored when configuring.
"""

from copy import deepcopy
import json
from pathlib import Path

from .errors import ConfigError

DOC_SUFFIX = '.doc'


def _is_doc_key(key):
    return isinstance(key, str) and key.endswith(DOC_SUFFIX)


def _configure(self, config):
    if config is None:
        config = dict()
    options = type(self).config_options
    for k in config.keys():
        if _is_doc_key(k):
            continue
        if k not in options:
            raise ConfigError(f"unknown option for {type(self).__name__}: '{k}'")

    for k, (default, doc) in options.items():
        setattr(self, k, deepcopy(config.get(k, default)))


def _get_config(self, skip_doc=False):
    res = dict()
    for k, (default, doc) in type(self).config_options.items():
        if not skip_doc:
            res[k + DOC_SUFFIX] = doc
        res[k] = deepcopy(getattr(self, k))
    return res


def _get_default_config(cls, skip_doc=False):
    res = dict()
    for k, (default, doc) in cls.config_options.items():
        if not skip_doc:
            res[k + DOC_SUFFIX] = doc
        res[k] = deepcopy(default)
    return res


class ConfigMeta(type):
    """ Metaclass that equips classes with a `config_options` dict with the
    methods `configure`, `get_config` and `get_default_config`.
    """

    def __new__(mcs, name, bases, namespace):
        options = namespace.get('config_options', None)
        assert options is not None, f"configurable class {name} declares no config_options"
        for k, v in options.items():
            assert isinstance(v, tuple) and len(v) == 2, f"malformed config option '{k}' in {name}"
        cls = super().__new__(mcs, name, bases, namespace)
        cls.configure = _configure
        cls.get_config = _get_config
        cls.get_default_config = classmethod(_get_default_config)
        return cls


def strip_doc(json_dict):
    """ Remove all documentation entries from a (nested) config dict.
    """
    if isinstance(json_dict, dict):
        return {k: strip_doc(v) for k, v in json_dict.items() if not _is_doc_key(k)}
    if isinstance(json_dict, list):
        return [strip_doc(v) for v in json_dict]
    return json_dict


def _substitute_base_dir(json_dict, base_dir):
    if isinstance(json_dict, dict):
        return {k: _substitute_base_dir(v, base_dir) for k, v in json_dict.items()}
    if isinstance(json_dict, list):
        return [_substitute_base_dir(v, base_dir) for v in json_dict]
    if isinstance(json_dict, str):
        return json_dict.replace('${BASE_DIR}', str(base_dir))
    return json_dict


def pretty_print(json_dict, filter_doc=False):
    if filter_doc:
        json_dict = strip_doc(json_dict)
    return json.dumps(json_dict, indent=2, sort_keys=True)


def store_json_config(json_dict, path):
    """ Write a config (or any json-compatible dict) to `path`.

    The output is deterministic: keys are sorted.
    """
    with open(path, 'w', encoding='utf-8') as f:
        f.write(pretty_print(json_dict))
        f.write('\n')


def load_json_config(path):
    """ Load a json config, drop documentation entries and replace
    `${BASE_DIR}` by the directory that contains the config file.
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            json_dict = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed json config '{path}': {e}")
    json_dict = strip_doc(json_dict)
    return _substitute_base_dir(json_dict, path.absolute().parent)
