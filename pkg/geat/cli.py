""" The `geat` command line interface: one subcommand per workflow step.

Every subcommand that writes files also writes a run manifest next to its
primary output (`<output>.manifest.json`) that records the arguments and the
resolved configuration; `geat replay <manifest>` runs it again.

Exit codes: 0 on success, 1 on usage and configuration errors, 2 on data,
tokenizer and checkpoint errors, 3 on numeric errors.
"""

from contextlib import contextmanager
from copy import deepcopy
import argparse
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .checkpoint import save_checkpoint, load_checkpoint
from .cluster import (elbow_k, pca_2d, write_clusters, write_embeddings, write_projection, write_wcss,
        CLUSTER_TARGETS)
from .configurable import load_json_config, store_json_config
from .corpus import (load_dataset, save_dataset, save_lab_vocab, load_lab_vocab, split_stratified)
from .ensemble import RankingProfile, aggregate, RULES
from .errors import GeatError, ConfigError, DataError
from .model import TRIPLET, MODEL_KINDS, append_lab, normalize_rows
from .rank import (rank_records, detect_unknown, accuracy_report, write_report, write_rankings, read_rankings,
        lab_embedding_from_samples, record_embeddings, REPORT_KS)
from .runcontext import RunContext
from .tokenize import train_bpe, save_tokenizer, load_tokenizer
from .train import train_triplet, train_classifier, write_training_log
from .utils import add_logging_args, init_logging, Timer


import logging
logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = '.manifest.json'


class UsageError(Exception):
    pass


class GeatArgumentParser(argparse.ArgumentParser):
    """ Reports usage errors with exit code 1 (instead of argparse's 2, which
    geat uses for data errors).
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _override(config, section, key, value):
    if value is not None:
        config.setdefault(section, dict())[key] = value


def _write_manifest(args, argv, ctx: RunContext, inputs, outputs):
    """ Store what is needed to repeat this run next to its first output.
    """
    manifest = {
            'subcommand': args.subcommand,
            'argv': list(argv),
            'config': ctx.get_config(skip_doc=True),
            'cwd': os.getcwd(),
            'inputs': [os.path.abspath(p) for p in inputs],
            'outputs': [os.path.abspath(p) for p in outputs],
            'seed': getattr(args, 'seed', None),
            'rule': getattr(args, 'rule', None),
            'version': __version__,
        }
    path = str(outputs[0]) + MANIFEST_SUFFIX
    store_json_config(manifest, path)
    logger.info(f"wrote run manifest '{path}'")


def _load_data(path, labs_path=None):
    vocab = None if labs_path is None else load_lab_vocab(labs_path)
    return load_dataset(path, lab_vocab=vocab)


# ---- subcommands ------------------------------------------------------------

def cmd_synth(args, config):
    _override(config, 'synth', 'n_labs', args.n_labs)
    _override(config, 'synth', 'per_lab', args.per_lab)
    _override(config, 'synth', 'motif_len', args.motif_len)
    _override(config, 'synth', 'seq_len', args.seq_len)
    _override(config, 'synth', 'noise', args.noise)
    _override(config, 'synth', 'seed', args.seed)
    ctx = RunContext(config)
    ds = ctx.synth_cfg.generate()
    save_dataset(ds, args.out)
    outputs = [args.out]
    if args.labs is not None:
        save_lab_vocab(ds.lab_vocab, args.labs)
        outputs.append(args.labs)
    return ctx, [], outputs


def cmd_split(args, config):
    ctx = RunContext(config)
    ds = _load_data(args.data, args.labs)
    parts = split_stratified(ds, tuple(args.fractions), seed=args.seed)
    outputs = []
    for name, part in zip(('train', 'val', 'test'), parts):
        path = f"{args.out_prefix}.{name}.csv"
        save_dataset(part, path)
        outputs.append(path)
    labs_path = f"{args.out_prefix}.labs.txt"
    save_lab_vocab(ds.lab_vocab, labs_path)
    outputs.append(labs_path)
    return ctx, [args.data], outputs


def cmd_tokenizer_train(args, config):
    _override(config, 'tokenizer', 'vocab_size', args.vocab_size)
    ctx = RunContext(config)
    ds = _load_data(args.data)
    tok = train_bpe([r.sequence for r in ds], ctx.tokenizer_cfg.vocab_size)
    save_tokenizer(tok, args.out)
    return ctx, [args.data], [args.out]


def cmd_train(args, config):
    _override(config, 'train', 'epochs', args.epochs)
    _override(config, 'train', 'batch_size', args.batch_size)
    _override(config, 'train', 'learning_rate', args.lr)
    _override(config, 'train', 'margin', args.margin)
    _override(config, 'train', 'seed', args.seed)
    _override(config, 'tokenizer', 'max_len', args.max_len)
    ctx = RunContext(config)

    ds = _load_data(args.data, args.labs)
    val_ds = None
    inputs = [args.data, args.tokenizer]
    if args.val is not None:
        val_ds = load_dataset(args.val, lab_vocab=ds.lab_vocab)
        inputs.append(args.val)
    tok = load_tokenizer(args.tokenizer)

    train_fn = train_triplet if args.model == TRIPLET else train_classifier
    params, log = train_fn(ds, ctx.model_cfg, ctx.train_cfg, tok, val_ds=val_ds)
    save_checkpoint(params, args.out)
    outputs = [args.out]
    if args.log is not None:
        write_training_log(log, args.log)
        outputs.append(args.log)
    return ctx, inputs, outputs


def _rank_config(args, config):
    _override(config, 'rank', 'tta_n', args.tta)
    _override(config, 'rank', 'seed', args.seed)
    return RunContext(config)


def cmd_evaluate(args, config):
    ctx = _rank_config(args, config)
    params = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data).remap(params.labs)
    rankings = rank_records(params, list(ds), ctx.rank_cfg.tta_n, ctx.rank_cfg.seed, ctx.rank_cfg.batch_size)
    ks = sorted(set(REPORT_KS) | set(args.k))
    report = accuracy_report(rankings, ds.labels().tolist(), ks)
    for k, acc in zip(report['k'], report['accuracy']):
        logger.info(f"top-{k} accuracy: {acc:.4f}")
    write_report(args.out, report)
    return ctx, [args.checkpoint, args.data], [args.out]


def cmd_rank(args, config):
    _override(config, 'rank', 'unknown_threshold', args.unknown_threshold)
    ctx = _rank_config(args, config)
    params = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data)
    records = list(ds)
    rankings = rank_records(params, records, ctx.rank_cfg.tta_n, ctx.rank_cfg.seed, ctx.rank_cfg.batch_size)
    ids = [r.id for r in records]
    write_rankings(args.out, ids, rankings, params.labs)
    outputs = [args.out]

    threshold = ctx.rank_cfg.unknown_threshold
    if threshold is not None:
        if params.kind != TRIPLET:
            raise ConfigError("unknown-lab detection needs a triplet model")
        rows = []
        for rid, r in sorted(zip(ids, rankings), key=lambda x: x[0]):
            rows.append((rid, r.top_score, r.unseen_score, int(detect_unknown(r, r.unseen_score, threshold))))
        unknown_path = args.unknown_out or f"{args.out}.unknown.csv"
        df = pd.DataFrame(rows, columns=['record_id', 'top_score', 'unseen_score', 'unknown'])
        df.to_csv(unknown_path, index=False, float_format='%.9g')
        outputs.append(unknown_path)
        logger.info(f"{int(df['unknown'].sum())} of {len(df)} sequences attributed to unknown labs")
    return ctx, [args.checkpoint, args.data], outputs


def cmd_ensemble(args, config):
    ctx = RunContext(config)
    labs = None if args.labs is None else load_lab_vocab(args.labs)
    ids, profiles = None, []
    for path in args.rankings:
        file_ids, rankings, labs = read_rankings(path, labs)
        by_id = dict(zip(file_ids, rankings))
        if ids is None:
            ids = sorted(by_id.keys())
        elif sorted(by_id.keys()) != ids:
            raise DataError(f"'{path}' ranks other records than '{args.rankings[0]}'")
        profiles.append(by_id)
    results = [aggregate(RankingProfile([p[i] for p in profiles]), args.rule) for i in ids]
    write_rankings(args.out, ids, results, labs)
    return ctx, list(args.rankings), [args.out]


def _target_embeddings(args, params, ctx):
    """ Names and unit-norm embeddings of the labs of a triplet model or of
    the records of a dataset.
    """
    if params.kind != TRIPLET:
        raise ConfigError("embeddings are only available for triplet models")
    if args.target == 'labs':
        return list(params.labs.names), normalize_rows(params.lab_table[:-1].astype(np.float64)), 'lab_name'
    if args.data is None:
        raise ConfigError("--data is required for --target sequences")
    ds = _load_data(args.data)
    return [r.id for r in ds], record_embeddings(params, list(ds), ctx.rank_cfg.batch_size), 'record_id'


def cmd_cluster(args, config):
    _override(config, 'cluster', 'target', args.target)
    _override(config, 'cluster', 'restarts', args.restarts)
    _override(config, 'cluster', 'seed', args.seed)
    if args.k_range is not None:
        _override(config, 'cluster', 'k_min', args.k_range[0])
        _override(config, 'cluster', 'k_max', args.k_range[1])
    ctx = RunContext(config)
    cc = ctx.cluster_cfg
    args.target = cc.target
    params = load_checkpoint(args.checkpoint)
    names, points, name_column = _target_embeddings(args, params, ctx)

    k_max = cc.k_max
    if k_max > len(points):
        logger.warning(f"only {len(points)} points to cluster, reducing k_max from {k_max} to {len(points)}")
        k_max = len(points)
    res = elbow_k(points, (cc.k_min, k_max), cc.seed, cc.restarts, cc.max_iters)
    prefix = args.out_prefix
    outputs = [f"{prefix}.clusters.csv", f"{prefix}.wcss.csv", f"{prefix}.pca.csv"]
    write_clusters(outputs[0], names, res.best.assignments, name_column)
    write_wcss(outputs[1], res.ks, res.wcss)
    write_projection(outputs[2], names, pca_2d(points), name_column)
    inputs = [args.checkpoint] + ([args.data] if args.data is not None else [])
    return ctx, inputs, outputs


def cmd_embed(args, config):
    ctx = RunContext(config)
    params = load_checkpoint(args.checkpoint)
    names, points, name_column = _target_embeddings(args, params, ctx)
    write_embeddings(args.out, names, points, name_column)
    inputs = [args.checkpoint] + ([args.data] if args.data is not None else [])
    return ctx, inputs, [args.out]


def cmd_lab_from_samples(args, config):
    ctx = _rank_config(args, config)
    params = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data)
    if args.lab is not None:
        ds = ds.only_labs([args.lab])
    if len(ds) == 0:
        raise DataError(f"no sample sequences for lab '{args.lab}' in '{args.data}'")
    name = args.name if args.name is not None else args.lab
    if name is None:
        raise ConfigError("the new lab needs a name (--name)")
    emb = lab_embedding_from_samples(params, list(ds), ctx.rank_cfg.tta_n, ctx.rank_cfg.seed)
    save_checkpoint(append_lab(params, name, emb), args.out)
    return ctx, [args.checkpoint, args.data], [args.out]


def cmd_replay(args, config):
    manifest = load_json_config(args.manifest)
    if any(k not in manifest for k in ('argv', 'config', 'cwd')):
        raise ConfigError(f"'{args.manifest}' is not a run manifest")
    logger.info(f"replaying: geat {' '.join(manifest['argv'])}")
    return manifest


@contextmanager
def _working_dir(path):
    prev = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(prev)


COMMANDS = {
        'synth': cmd_synth,
        'split': cmd_split,
        'tokenizer-train': cmd_tokenizer_train,
        'train': cmd_train,
        'evaluate': cmd_evaluate,
        'rank': cmd_rank,
        'ensemble': cmd_ensemble,
        'cluster': cmd_cluster,
        'embed': cmd_embed,
        'lab-from-samples': cmd_lab_from_samples,
        'replay': cmd_replay,
    }


def build_parser():
    # no abbreviations: `train --log` must not be taken for a prefix of --loglevel
    ap = GeatArgumentParser(prog='geat', description="Attribute engineered DNA sequences to their lab of origin.",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter, allow_abbrev=False)
    add_logging_args(ap, "warning")
    ap.add_argument('-c', '--config', metavar='JSONFILE', default=None,
            help='json config with the sections synth, tokenizer, model, train, rank and cluster; flags override it')
    ap.add_argument('--timing', action='store_true', help='log run times of the main steps')
    ap.add_argument('--version', action='version', version=f"geat {__version__}")

    sub = ap.add_subparsers(dest='subcommand', metavar='SUBCOMMAND', parser_class=GeatArgumentParser)
    sub.required = True

    p = sub.add_parser('synth', help='create a synthetic dataset with planted lab motifs')
    p.add_argument('-o', '--out', required=True, metavar='CSVFILE')
    p.add_argument('--labs', metavar='FILE', default=None, help='also write the lab vocabulary to this file')
    p.add_argument('--n-labs', type=int, default=None)
    p.add_argument('--per-lab', type=int, default=None)
    p.add_argument('--motif-len', type=int, default=None)
    p.add_argument('--seq-len', type=int, default=None)
    p.add_argument('--noise', type=float, default=None)
    p.add_argument('--seed', type=int, default=None)

    p = sub.add_parser('split', help='stratified split into train, validation and test CSV files')
    p.add_argument('-d', '--data', required=True, metavar='CSVFILE')
    p.add_argument('--labs', metavar='FILE', default=None, help='lab vocabulary for the dataset')
    p.add_argument('-o', '--out-prefix', required=True, metavar='PREFIX',
            help='writes PREFIX.train.csv, PREFIX.val.csv, PREFIX.test.csv and PREFIX.labs.txt')
    p.add_argument('--fractions', type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=('TRAIN', 'VAL', 'TEST'))
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('tokenizer-train', help='learn a BPE tokenizer on the sequences of a dataset')
    p.add_argument('-d', '--data', required=True, metavar='CSVFILE')
    p.add_argument('-o', '--out', required=True, metavar='FILE')
    p.add_argument('--vocab-size', type=int, default=None)

    p = sub.add_parser('train', help='train a triplet network or a classifier')
    p.add_argument('-d', '--data', required=True, metavar='CSVFILE')
    p.add_argument('--val', metavar='CSVFILE', default=None, help='validation data, evaluated after every epoch')
    p.add_argument('--labs', metavar='FILE', default=None, help='lab vocabulary for the training data')
    p.add_argument('-t', '--tokenizer', required=True, metavar='FILE')
    p.add_argument('-m', '--model', choices=MODEL_KINDS, default=TRIPLET)
    p.add_argument('-o', '--out', required=True, metavar='CHECKPOINT')
    p.add_argument('--log', metavar='CSVFILE', default=None, help='write the training log to this file')
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--lr', type=float, default=None)
    p.add_argument('--margin', type=float, default=None)
    p.add_argument('--max-len', type=int, default=None)
    p.add_argument('--seed', type=int, default=None)

    def add_tta_args(p):
        p.add_argument('--tta', type=int, default=None, help='number of shifted versions per sequence')
        p.add_argument('--seed', type=int, default=None)

    p = sub.add_parser('evaluate', help='top-k accuracy of a model on a labeled dataset')
    p.add_argument('--checkpoint', required=True, metavar='CHECKPOINT')
    p.add_argument('-d', '--data', required=True, metavar='CSVFILE')
    p.add_argument('--k', type=int, nargs='+', default=[10], dest='k', help='additional k values for the report')
    p.add_argument('-o', '--out', required=True, metavar='CSVFILE')
    add_tta_args(p)

    p = sub.add_parser('rank', help='rank the known labs for every sequence of a dataset')
    p.add_argument('--checkpoint', required=True, metavar='CHECKPOINT')
    p.add_argument('-d', '--data', required=True, metavar='CSVFILE')
    p.add_argument('-o', '--out', required=True, metavar='CSVFILE')
    p.add_argument('--unknown-threshold', type=float, default=None,
            help='report sequences whose best lab similarity is below this value as coming from unknown labs')
    p.add_argument('--unknown-out', metavar='CSVFILE', default=None)
    add_tta_args(p)

    p = sub.add_parser('ensemble', help='combine ranking files of several models by voting')
    p.add_argument('rankings', nargs='+', metavar='CSVFILE')
    p.add_argument('--rule', choices=RULES, default='copeland')
    p.add_argument('--labs', metavar='FILE', default=None, help='lab vocabulary (default: sorted lab names)')
    p.add_argument('-o', '--out', required=True, metavar='CSVFILE')

    def add_target_args(p):
        p.add_argument('--checkpoint', required=True, metavar='CHECKPOINT')
        p.add_argument('--target', choices=CLUSTER_TARGETS, default=None)
        p.add_argument('-d', '--data', metavar='CSVFILE', default=None, help='records for --target sequences')

    p = sub.add_parser('cluster', help='k-means clustering of embeddings with elbow selection of k')
    add_target_args(p)
    p.add_argument('--k-range', type=int, nargs=2, default=None, metavar=('KMIN', 'KMAX'))
    p.add_argument('--restarts', type=int, default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('-o', '--out-prefix', required=True, metavar='PREFIX',
            help='writes PREFIX.clusters.csv, PREFIX.wcss.csv and PREFIX.pca.csv')

    p = sub.add_parser('embed', help='export lab or sequence embeddings of a triplet model')
    add_target_args(p)
    p.add_argument('-o', '--out', required=True, metavar='CSVFILE')

    p = sub.add_parser('lab-from-samples', help='add a lab to a triplet model from sample sequences')
    p.add_argument('--checkpoint', required=True, metavar='CHECKPOINT')
    p.add_argument('-d', '--data', required=True, metavar='CSVFILE')
    p.add_argument('--lab', default=None, help='use only the records of this lab as samples')
    p.add_argument('--name', default=None, help='name of the new lab (default: --lab)')
    p.add_argument('-o', '--out', required=True, metavar='CHECKPOINT')
    add_tta_args(p)

    p = sub.add_parser('replay', help='run the command recorded in a run manifest again')
    p.add_argument('manifest', metavar='MANIFEST')

    return ap


def _run(argv, config=None):
    """ Run one command. A given `config` replaces the file passed with -c,
    which is how replays use the configuration recorded in a manifest.
    """
    ap = build_parser()
    args = ap.parse_args(argv)
    init_logging(args.loglevel, args.logfile)
    Timer.enabled = args.timing
    if getattr(args, 'target', None) is None and args.subcommand == 'embed':
        args.target = 'labs'

    if config is not None:
        config = deepcopy(config)
    elif args.config is not None:
        config = load_json_config(args.config)
    else:
        config = dict()

    res = COMMANDS[args.subcommand](args, config)
    if args.subcommand == 'replay':
        # relative paths in the recorded arguments refer to the original working directory
        with _working_dir(res['cwd']):
            return _run(res['argv'], res['config'])

    ctx, inputs, outputs = res
    _write_manifest(args, argv, ctx, inputs, outputs)
    return 0


def run_cli(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    try:
        with Timer("geat " + (argv[0] if len(argv) > 0 else "")):
            return _run(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help and --version
        return 0 if e.code is None else int(e.code)
    except GeatError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"geat: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"geat: error: {e}", file=sys.stderr)
        return DataError.exit_code


def main():
    sys.exit(run_cli())
