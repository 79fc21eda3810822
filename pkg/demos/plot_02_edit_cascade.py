"""
Sentence-level rollout editing
==============================

The edit cascade nudges a generated report toward its reference one sentence
at a time: fix mislabeled presence (a), replace (b) or delete (c) spurious
claims, append missing findings (d), and never leave the report empty (e).
"""
from __future__ import annotations

import numpy as np

from editgrpo.edit import EditConfig, edit, paragraph_edit
from editgrpo.extractor import ExtractionMode
from editgrpo.ontology import build_default_ontology
from editgrpo.rewards import composite_reward

onto = build_default_ontology(7)
y = "Moderate cardiomegaly. Small left pleural effusion. No pneumothorax."

# %%
# One rule of each kind.
cases = {
    "mislabel": "No pleural effusion. Moderate cardiomegaly. No pneumothorax.",
    "synonym claim": "The heart is enlarged. No pneumothorax.",
    "spurious": "There is a rib fracture. Moderate cardiomegaly.",
    "empty": "",
}
for name, x in cases.items():
    res = edit(x, y, EditConfig(tau=0.6), onto, np.random.default_rng(0))
    print(f"--- {name}: {x!r}")
    for st in res.trace.steps:
        print("   ", st.rule.value, st.sentence_index, st.inserted_text, "|", st.removed_text)
    r0 = composite_reward(x, y, onto).composite
    r1 = composite_reward(res.edited_text, y, onto).composite
    print(f"    reward {r0:.3f} -> {r1:.3f}: {res.edited_text!r}")

# %%
# The similarity threshold decides between replacing and deleting a claim
# about a related finding.
x = "The heart is enlarged."
for tau in (0.0, 0.6, 0.9, 0.95):
    res = edit(x, "No cardiomegaly.", EditConfig(tau=tau), onto)
    print(tau, [s.rule.name for s in res.trace.steps])

# %%
# Exact-surface matching and whole-paragraph replacement, for contrast.
print(edit(cases["synonym claim"], y, EditConfig(mode=ExtractionMode.EXACT), onto).edited_text)
print(paragraph_edit(cases["synonym claim"], y))
