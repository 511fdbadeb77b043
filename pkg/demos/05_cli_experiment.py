"""Drive a full experiment through the command-line entry point.

Writes a config, runs it (artifacts land in a temp directory), then sweeps
the grid resolution and prints the long-format sweep table.
"""

import json
import pathlib
import tempfile

from pathfk.cli import main

config = {
    "model": "heat",
    "grid": {"T": 1.0, "N": 16},
    "mc": {"seed": 42, "n_scenarios": 10_000},
    "checks": {
        "closed_form": {"tol_rel": 0.02},
        "z_representation": {"tol": 0.05},
        "flow": {"s": 0.5},
    },
}

with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)
    cfg = tmp / "experiment.json"
    cfg.write_text(json.dumps(config, indent=2))

    print("== pathfk run ==")
    code = main(["run", str(cfg), "--output", str(tmp / "out")])
    print(f"exit code: {code}")
    print("artifacts:", sorted(p.name for p in (tmp / "out").iterdir()))

    print("\n== pathfk sweep --axis grid.N ==")
    main(["sweep", str(cfg), "--axis", "grid.N", "--values", "8,16",
          "--output", str(tmp / "sweep")])
    print((tmp / "sweep" / "sweep.csv").read_text())
