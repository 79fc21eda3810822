"""
GRPO collapse versus SFT + EditGRPO
===================================

From scratch, vanilla GRPO on a 70%-normal world drifts to the safe
"No acute cardiopulmonary abnormality" report.  A single SFT epoch followed
by EditGRPO keeps abnormal findings in play.  One seed, about a minute.
"""
from __future__ import annotations

from editgrpo.ontology import build_default_ontology
from editgrpo.trainer import TrainerConfig, train
from editgrpo.world import WorldConfig, make_corpus

onto = build_default_ontology(7)
world = WorldConfig(seed=0)
corpus = make_corpus(world, onto, 2000)

sft = train(TrainerConfig(variant="sft", sft_epochs=1), world, onto, corpus=corpus, run_eval=False).params

# %%
runs = {
    "GRPO (scratch)": train(TrainerConfig(variant="grpo"), world, onto, corpus=corpus),
    "SFT + GRPO": train(TrainerConfig(variant="grpo"), world, onto, params_in=sft, corpus=corpus),
    "SFT + EditGRPO": train(TrainerConfig(variant="editgrpo"), world, onto, params_in=sft, corpus=corpus),
}

# %%
print(f"{'run':16s} composite  macroF1-14  no-finding share")
for name, r in runs.items():
    s = r.eval_summary
    print(f"{name:16s} {s['composite']:.4f}     {s['macro_f1_14']:.4f}      {s['no_finding_frac']:.3f}")

# %%
# Training curves: mean sampled reward every 50 steps.
for name, r in runs.items():
    print(name, [round(m["mean_reward"], 3) for m in r.metrics[::50]])
