"""Print the counterexample transcript and write the objective curve to out/counterexample."""
import sys
from pathlib import Path

from piplus_kit.cli import main

if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out/counterexample")
    sys.exit(main(["demo-counterexample", "--out", str(out)]))
