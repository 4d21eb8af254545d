#!/usr/bin/env python3

""" Create an explicit default run config, with all sections and options.
"""

import argparse
import os
import sys

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)


from geat.configurable import load_json_config, pretty_print
from geat.runcontext import RunContext
from geat.utils import parse_args_with_logging

def main():
    argparser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    argparser.add_argument('-f', '--filter-doc', action='store_true', help='do not emit documentation entries')

    argparser.add_argument('-o', '--outfile', metavar='FILENAME', help='path where the config in json format should be saved')

    argparser.add_argument('base', metavar='CONFIG', nargs='?', default=None,
            help='a (partial) config whose values replace the defaults, e.g. configs/tiny.json')

    args = parse_args_with_logging(argparser, "warning")

    if args.base is None:
        cfg = RunContext.get_default_config()
    else:
        cfg = RunContext(load_json_config(args.base)).get_config()

    text = pretty_print(cfg, filter_doc=args.filter_doc)
    if args.outfile is not None:
        with open(args.outfile, 'w') as f:
            print(text, file=f)
    else:
        print(text)

if __name__ == "__main__":
    main()
