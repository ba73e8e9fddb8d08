"""
A small four-way experiment
===========================

Runs every approach for a handful of seeds on a reduced budget, then
compares them the same way the command line `compare` verb does.
The same flow from a shell:

    facilmut run --spec spec.json --out runs --jobs 4
    facilmut posthoc runs
    facilmut compare runs
"""

import tempfile
from pathlib import Path

from facilmut.cli import ExperimentSpec, execute_batch, main

spec = ExperimentSpec.from_dict({
    "approaches": ["FMX", "FM", "OM", "OMX"],
    "seeds": {"base": 0, "count": 4},
    "overrides": {"population_size": 30, "generations": 30},
})

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    execute_batch(spec, out, jobs=1)
    # generations.csv is the plotting interface
    print((out / "FMX" / "seed_0" / "generations.csv").read_text().splitlines()[-1])
    main(["posthoc", str(out), "--repetitions", "3"])
    main(["compare", str(out)])
