# %% [markdown]
# # Command-line pipeline
#
# The same steps through the ``anisoquant`` command: generate data, train,
# search and evaluate. Each call below is equivalent to running
# ``anisoquant <args>`` in a shell.

# %%
import json
import tempfile
from pathlib import Path

from anisoquant.cli import main

work = Path(tempfile.mkdtemp())
base = work / "base.fvecs"


def run(*args):
    print("$ anisoquant", " ".join(map(str, args)))
    status = main([str(a) for a in args])
    print("exit", status)


# %%
run("gen", "--n", 5000, "--d", 32, "--queries", 200, "--centers", 256, "--seed", 1, "--out", base)
run("eta", "-T", 0.2, "--d-max", 6)

# %% [markdown]
# Experiments can be described in a JSON file; flags override its entries.

# %%
config = work / "experiment.json"
config.write_text(json.dumps({
    "data": str(base),
    "loss": {"type": "score_aware", "threshold": 0.2, "eta_mode": "exact"},
    "quantizer": {"type": "pq", "M": 8, "k": 16},
    "train": {"max_iterations": 10},
    "eval": {"queries": str(work / "base.queries.fvecs"), "Ns": [1, 10, 100]},
}))
run("train", "--config", config, "--out", work / "run")
print((work / "run" / "train_log.jsonl").read_text().splitlines()[0])

# %%
run("search", "--artifacts", work / "run", "--query-file", work / "base.queries.fvecs", "--topN", 5)
run("eval", "--config", config, "--artifacts", work / "run", "--out", work / "run")
