#!/usr/bin/env python3

""" Train a triplet network and a classifier on a synthetic benchmark and
compare their top-k accuracies with those of the Borda and Copeland ensembles
of both models.
"""

import argparse
import os
import sys

import pandas as pd

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.configurable import load_json_config
from geat.corpus import split_stratified
from geat.ensemble import RankingProfile, aggregate, RULES
from geat.rank import rank_records, top_k_accuracy
from geat.runcontext import RunContext
from geat.tokenize import train_bpe
from geat.train import train_triplet, train_classifier
from geat.utils import parse_args_with_logging, Timer

import logging
logger = logging.getLogger(__name__)


def main():
    argparser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    argparser.add_argument('-c', '--config', metavar='JSONFILE', default=None,
            help='run config; the synth section describes the benchmark')

    argparser.add_argument('--ks', type=int, nargs='+', default=[1, 5, 10], help='k values to report')

    argparser.add_argument('-o', '--outfile', metavar='CSVFILE', default=None, help='also write the table to this file')

    args = parse_args_with_logging(argparser, "info")

    Timer.enabled = True

    config = dict() if args.config is None else load_json_config(args.config)
    ctx = RunContext(config)

    ds = ctx.synth_cfg.generate()
    train, val, test = split_stratified(ds, (0.8, 0.1, 0.1), seed=ctx.synth_cfg.seed)
    logger.info(f"benchmark: {ds.num_labs} labs, {len(train)}/{len(val)}/{len(test)} records")

    with Timer("tokenizer"):
        tok = train_bpe([r.sequence for r in train], ctx.tokenizer_cfg.vocab_size)

    models = dict()
    with Timer("triplet training"):
        models['triplet'], _ = train_triplet(train, ctx.model_cfg, ctx.train_cfg, tok, val_ds=val)
    with Timer("classifier training"):
        models['classifier'], _ = train_classifier(train, ctx.model_cfg, ctx.train_cfg, tok, val_ds=val)

    rc = ctx.rank_cfg
    rankings = {name: rank_records(params, list(test), rc.tta_n, rc.seed, rc.batch_size)
            for name, params in models.items()}
    for rule in RULES:
        rankings[rule] = [aggregate(RankingProfile(list(voters)), rule)
                for voters in zip(rankings['triplet'], rankings['classifier'])]

    truths = test.labels().tolist()
    rows = []
    for name, rs in rankings.items():
        row = {'method': name}
        for k in args.ks:
            row[f"top{k}"] = top_k_accuracy(rs, truths, k)
        rows.append(row)
    table = pd.DataFrame(rows)

    print(table.to_string(index=False, float_format='%.4f'))
    if args.outfile is not None:
        table.to_csv(args.outfile, index=False, float_format='%.6f')

if __name__ == "__main__":
    main()
