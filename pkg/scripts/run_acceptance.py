"""Run the acceptance suite and print one line per criterion.

    python scripts/run_acceptance.py            # all thirteen criteria
    python scripts/run_acceptance.py 1 3 8      # a subset
"""
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent


def main(argv):
    target = str(ROOT / "tests" / "test_acceptance.py")
    args = [target, "-q", "-p", "no:cacheprovider"]
    if argv:
        args += ["-k", " or ".join(f"criterion_{int(c):02d}" for c in argv)]
    return pytest.main(args)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
