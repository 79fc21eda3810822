"""
Paired tests and the command line
=================================

The Wilcoxon signed-rank test (exact for small n, normal approximation
beyond) and a tiny end-to-end pass through the ``editgrpo`` CLI.
"""
from __future__ import annotations

import json
import tempfile
from pathlib import Path

import numpy as np

from editgrpo.cli import main
from editgrpo.stats import wilcoxon_signed_rank

# %%
print(wilcoxon_signed_rank(np.arange(1.0, 7.0), np.zeros(6)))
rng = np.random.default_rng(0)
a, b = rng.normal(0.4, 1, 20), rng.normal(0, 1, 20)
print("exact ", wilcoxon_signed_rank(a, b).p_two_sided)
print("normal", wilcoxon_signed_rank(a, b, exact_max_n=0).p_two_sided)

# %%
# Train two tiny runs, compare their per-case eval composites, plot curves.
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"n_cases": 200, "trainer": {"steps": 20, "batch_cases": 8, "sft_epochs": 1}}))
    main(["train", "--config", str(cfg), "--out", str(tmp / "edit")])
    main(["train", "--config", str(cfg), "--set", "variant=drgrpo", "--out", str(tmp / "dr")])
    main(["compare", "--a", str(tmp / "edit" / "eval.jsonl"), "--b", str(tmp / "dr" / "eval.jsonl")])
    main(["plot", "--csv", str(tmp / "edit" / "metrics.csv"), "--csv", str(tmp / "dr" / "metrics.csv"), "--out", str(tmp / "curves.svg")])
    print((tmp / "curves.svg").read_text()[:120], "...")
    main(["edit", "--x", "No pleural effusion.", "--y", "Small left pleural effusion."])
