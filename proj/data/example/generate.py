"""Regenerates the bundled example. Output is fixed by the seed below."""
import json
import pathlib

import numpy as np

rng = np.random.default_rng(20240611)
here = pathlib.Path(__file__).resolve().parent
n = 40
samples = [f"S{i:02d}" for i in range(1, n + 1)]

cna = {k: rng.normal(size=n) for k in ("MYC", "EGFR", "CDKN2A")}
meth = {k: rng.uniform(0, 1, size=n) for k in ("CDKN2A", "CAV1")}

genes = {
    "MYC": 1.2 * cna["MYC"] + rng.normal(scale=0.6, size=n),
    "EGFR": 0.9 * np.tanh(2 * cna["EGFR"]) + rng.normal(scale=0.5, size=n),
    "CDKN2A": 0.4 * cna["CDKN2A"] - 1.5 * meth["CDKN2A"] + rng.normal(scale=0.7, size=n),
}
proteins = {
    "MYC_p": 0.8 * genes["MYC"] + rng.normal(scale=0.5, size=n),
    "CAV1_p": -2.0 * meth["CAV1"] + rng.normal(scale=0.6, size=n),
}
stemness = 0.9 * genes["MYC"] - 0.7 * proteins["CAV1_p"] + rng.normal(scale=0.8, size=n)
time = np.exp(1.5 + 0.5 * genes["MYC"] + rng.normal(scale=0.5, size=n))
censor = np.exp(1.5 + rng.normal(scale=0.8, size=n) + 0.6)
event = (time <= censor).astype(int)
obs = np.minimum(time, censor)


def write(name, cols, rows=samples, sep="\t"):
    with open(here / name, "w") as f:
        f.write(sep.join(["sample"] + list(cols)) + "\n")
        for i, s in enumerate(samples):
            if s not in rows:
                continue
            vals = []
            for v in cols.values():
                x = v[i]
                vals.append(str(int(x)) if isinstance(x, (np.integer,)) else f"{x:.6f}")
            f.write(sep.join([s] + vals) + "\n")


write("cna.tsv", cna)
write("meth.tsv", meth)
write("genes.tsv", genes)
# S40 has no protein measurement and is dropped by the sample intersection
write("proteins.tsv", proteins, rows=samples[:-1])
write("outcome.tsv", {"stemness": stemness})
write("survival.tsv", {"time": obs, "event": event})
write("survival_all_events.tsv", {"time": obs, "event": np.ones(n, dtype=np.int64)})

(here / "map.txt").write_text(
    "# kind id [coding_gene] upstream\n"
    "gene MYC cna:MYC\n"
    "gene EGFR cna:EGFR\n"
    "gene CDKN2A cna:CDKN2A,meth:CDKN2A\n"
    "protein MYC_p MYC cna:MYC\n"
    "protein CAV1_p - meth:CAV1\n"
)

config = {
    "data": {
        "upstream": [{"platform": "cna", "path": "cna.tsv"}, {"platform": "meth", "path": "meth.tsv"}],
        "genes": "genes.tsv",
        "proteins": "proteins.tsv",
        "outcome": "outcome.tsv",
    },
    "map": "map.txt",
    "mechanistic": {"nu0": 3, "tau0_sq": 1, "lambda0": 1},
    "calibration": {"aggregation": "maximal"},
    "cbvs": {"algorithm": "gibbs", "iterations": 4000, "burn_in": 1000, "thin": 1},
    "fdr": {"alpha": 0.1, "rule": "paper"},
    "seed": 2024,
    "jobs": 1,
}
(here / "config.json").write_text(json.dumps(config, indent=2) + "\n")
