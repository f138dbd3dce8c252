"""Serve the deterministic mock translator over stdin/stdout.

Run with ``python -m fewshot_icsf.bt_server --seed 7``; speaks the
line-delimited JSON translate protocol until EOF.
"""

import argparse
import sys

from .augment import MockTranslationClient, serve_translation


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    serve_translation(MockTranslationClient(seed=args.seed), sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
