"""
The synthetic radiology world
=============================

A closed-world ontology of 14 findings, a sentence template bank, and a
case generator whose reference reports are rendered from those templates.
"""
from __future__ import annotations

import numpy as np

from editgrpo.extractor import extract_report, text_labels
from editgrpo.ontology import build_default_ontology
from editgrpo.world import WorldConfig, label_prevalence, make_corpus, split_corpus

# %%
# The ontology is deterministic given its seed; the vocabulary is the template
# bank plus one END token.
onto = build_default_ontology(7)
print(len(onto.findings), "findings,", onto.vocab_size, "templates, END =", onto.end_token)
for t in onto.templates[:5]:
    print(f"  [{t.template_id:2d}] {t.text}")

# %%
# Synonyms sit close in embedding space; unrelated surfaces are orthogonal.
heart = extract_report(["The heart is enlarged."], onto)[0]
cm = extract_report(["Moderate cardiomegaly."], onto)[0]
print(heart.surface, "vs", cm.surface, "cos =", round(float(onto.lexicon[heart.surface].embedding @ onto.lexicon[cm.surface].embedding), 3))

# %%
# Cases: 70% normal by default, rare findings stay rare.
corpus = make_corpus(WorldConfig(seed=0), onto, 2000)
train, evaluation = split_corpus(corpus)
print(len(train), "train /", len(evaluation), "eval cases")
print("normal share:", np.mean([c.is_normal for c in corpus]))
print("prevalence:", np.round(label_prevalence(corpus), 3))

# %%
# A reference report always asserts its case's true findings.
c = next(c for c in corpus if not c.is_normal)
print(c.reference_text)
print(text_labels(c.reference_text, onto), "==", c.true_findings)
