""" Helpers shared by all geat components: logging setup, seeded random
streams, worker counts, and timers for measuring run times of code portions.
"""

from collections import defaultdict
import functools
import logging
import os
import sys
import time

import numpy as np
from progress.bar import Bar as ProgressBar

logger = logging.getLogger(__name__)


# Named random streams. Every random decision in geat draws from a generator
# derived from the user seed and one of these stream ids (plus an index path,
# e.g. the epoch or the record ordinal).
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SHIFT = 3
STREAM_TTA = 4
STREAM_SYNTH = 5
STREAM_SPLIT = 6
STREAM_KMEANS = 7

SEED_MASK = (1 << 64) - 1


def _seed_entropy(seed, path):
    return [int(seed) & SEED_MASK] + [int(p) & SEED_MASK for p in path]


def derive_rng(seed, *path):
    """ Create a numpy Generator for the stream identified by `path` below the
    64-bit `seed`. Equal arguments always yield identically behaving
    generators, different paths yield independent ones.
    """
    return np.random.default_rng(np.random.SeedSequence(_seed_entropy(seed, path)))


def split_seed(seed, *path):
    """ Derive a new 64-bit seed for the sub-stream identified by `path`.
    """
    state = np.random.SeedSequence(_seed_entropy(seed, path)).generate_state(1, dtype=np.uint64)
    return int(state[0])


def worker_count():
    """ Number of worker threads to use, capped by the `GEAT_THREADS`
    environment variable.
    """
    env = os.environ.get('GEAT_THREADS', None)
    if env is not None:
        try:
            res = int(env)
        except ValueError:
            logger.warning(f"ignoring malformed GEAT_THREADS value '{env}'")
        else:
            return max(1, res)
    return os.cpu_count() or 1


def progress_bar(message, num):
    """ A progress bar for `num` steps if stderr is a terminal, otherwise a
    stand-in with the same interface that does nothing.
    """
    if sys.stderr.isatty() and logger.getEffectiveLevel() <= logging.INFO:
        return ProgressBar(message, suffix='%(percent).1f%%', max=num)
    return _SilentBar()


class _SilentBar:
    def __enter__(self):
        return self

    def __exit__(self, *args):
        return False

    def next(self, n=1):
        pass


def init_logging(loglevel, logfile=None):
    numeric_level = getattr(logging, loglevel.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"invalid log level: {loglevel}")
    handlers = [logging.StreamHandler()]
    if logfile is not None:
        handlers.append(logging.FileHandler(logfile))
    logging.basicConfig(level=numeric_level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=handlers, force=True)


def add_logging_args(argparser, default_loglevel="warning"):
    argparser.add_argument('-l', '--loglevel', dest='loglevel', metavar='LEVEL',
            default=default_loglevel,
            choices=['debug', 'info', 'warning', 'error', 'critical'],
            help='configures the amount of logging information to print')
    argparser.add_argument('--logfile', metavar='FILE', default=None,
            help='print logs to this file as well')


def parse_args_with_logging(argparser, default_loglevel="warning", args=None):
    """ Add logging flags to `argparser`, parse `args` (or sys.argv) and set
    up logging accordingly.
    """
    add_logging_args(argparser, default_loglevel)
    parsed = argparser.parse_args(args)
    init_logging(parsed.loglevel, parsed.logfile)
    return parsed


class TimerDeco:
    """ Function decorators to measure the (accumulated) time spent between
    entering a function and returning from it.
    """

    @staticmethod
    def Timer(**timer_args):
        def timer_deco_impl(func):
            @functools.wraps(func)
            def timer_wrapper_impl(*inner_args, **inner_kwargs):
                with Timer(func.__qualname__, **timer_args):
                    return func(*inner_args, **inner_kwargs)
            return timer_wrapper_impl
        return timer_deco_impl

    @staticmethod
    def Sub(func):
        return TimerDeco.Timer(log=False, accumulate=True)(func)


class Timer:
    """ Context manager that logs the time spent in its body.

    Sub-timers (`accumulate=True`) add their time to the innermost enclosing
    timer, which reports them when it finishes. Timing is off unless
    `Timer.enabled` is set, e.g. by `geat --timing`.
    """

    parent_stack = []

    enabled = False

    def __init__(self, identifier, log=True, accumulate=False):
        self.identifier = identifier
        self.log = log
        self.accumulate = accumulate

        self.start = None
        self.seconds_passed = None
        self.sub_results = defaultdict(lambda: {'time': 0.0, 'num': 0})

    @staticmethod
    def Sub(identifier):
        return Timer(identifier, log=False, accumulate=True)

    def __enter__(self):
        if not self.enabled:
            return self
        self.parent_stack.append(self)
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_value, trace):
        if not self.enabled or self.start is None:
            return False

        self.seconds_passed = time.perf_counter() - self.start
        self.start = None
        self.parent_stack.pop()

        if self.log:
            logger.info(self.get_result())

        if self.accumulate and len(self.parent_stack) > 0:
            entry = self.parent_stack[-1].sub_results[self.identifier]
            entry['time'] += self.seconds_passed
            entry['num'] += 1
        return False

    def get_result(self):
        assert self.seconds_passed is not None
        res = f"time for '{self.identifier}': {self.seconds_passed:.6f} s"
        for k, v in self.sub_results.items():
            res += f"\n  - acc time for '{k}' ({v['num']} executions): {v['time']:.6f} s"
        return res
