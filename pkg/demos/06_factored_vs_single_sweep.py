"""Factored-vs-single policy comparison artifact, in miniature.

Launches the sweep subcommand (separate processes, fully seeded) for the
chain topology and the single-node policy on chain-lqr-3, then reports where
the overlay SVG landed. Step counts are kept tiny here; pass bigger --steps
for a real comparison.
"""

import pathlib
import subprocess
import sys
import tempfile

out_dir = pathlib.Path(tempfile.mkdtemp(prefix="dagsac_sweep_"))
cmd = [sys.executable, "-m", "dagsac", "sweep",
       "--env", "chain-lqr-3",
       "--topologies", "hopper-chain,single",
       "--seeds", "0,1,2",
       "--steps", "3000",
       "--start-steps", "500",
       "--eval-interval", "0",
       "--out-dir", str(out_dir)]
print("running:", " ".join(cmd))
subprocess.run(cmd, check=True)

print("\nruns:")
for metrics in sorted(out_dir.glob("*/metrics.csv")):
    last = metrics.read_text().splitlines()[-1].split(",")
    print(f"  {metrics.parent.name:22s} episodes={last[1]:>3s} "
          f"avg_return_100={float(last[3]):9.2f}")
print("\noverlay:", out_dir / "overlay.svg")
