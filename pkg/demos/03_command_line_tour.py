"""Every subcommand of the ``powerlag`` command line on the bundled scenarios.

Equivalent shell commands::

    powerlag validate-config --scenario demos/scenarios/samplesize.ini
    powerlag samplesize  --scenario demos/scenarios/samplesize.ini
    powerlag bias        --scenario demos/scenarios/bias.ini
    powerlag power-curve --scenario demos/scenarios/power_curve.ini --threads 0
    powerlag simulate    --scenario demos/scenarios/simulate.ini --seed 5

Without ``--out`` each command writes to the ``[output] dir`` of its
scenario, relative to the working directory; this tour sends everything to
``demos/output/<command>/`` instead. The simulated power curve is the slow
step (about ten seconds on one core).
"""

from pathlib import Path

from powerlag.cli import main

here = Path(__file__).parent / "scenarios"
out = Path(__file__).parent / "output"

steps = [
    ["validate-config", "--scenario", str(here / "samplesize.ini")],
    ["samplesize", "--scenario", str(here / "samplesize.ini")],
    ["bias", "--scenario", str(here / "bias.ini")],
    ["power-curve", "--scenario", str(here / "power_curve.ini"), "--threads", "0"],
    ["simulate", "--scenario", str(here / "simulate.ini"), "--seed", "5"],
]
for argv in steps:
    print(f"\n$ powerlag {' '.join(argv)}")
    code = main(argv + ["--out", str(out / argv[0])])
    if code:
        raise SystemExit(code)
