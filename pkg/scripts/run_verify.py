"""Run the full verification battery (gradients, drop equivalence, counts)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dotprune.cli import main

if __name__ == "__main__":
    raise SystemExit(main(["verify", "--out", "verify_out"] + sys.argv[1:]))
