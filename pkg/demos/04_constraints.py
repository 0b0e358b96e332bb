"""Writing and comparing loading hypotheses.

Substantive expectations about the loadings are written as inequalities in a
small text language. Each hypothesis is compared with the unconstrained
model by the ratio of posterior to prior mass satisfying it.
"""
import numpy as np

import ucfm
from ucfm.dsl import render, satisfies

# %% The language
text = """
L[1,1] > abs(L[1,2])      # BMI mainly on factor 1
L[7,1] < -L[7,2]          # SBP leans negative on factor 2
abs(L[8,1]) < .3          # DBP barely on factor 1
"""
ast = ucfm.parse(text)
print(render(ast))

# Mistakes are reported with their position
try:
    ucfm.parse("L[1,1] > abs(L[1,2]\n")
except ucfm.DslError as exc:
    print("error:", exc)

# %% Checking a loading matrix directly
L = np.array([[.6, .2], [.1, -.5], [0, .7], [.5, .1],
              [.8, 0], [.6, -.1], [.2, -.4], [.1, -.5]])
spec = ucfm.UcfmSpec.from_anchors([4, 2])
cs = ucfm.expand(ast, spec, p=8)
print("satisfied:", satisfies(L, cs))

# %% Comparing the three bundled hypotheses on the metabolic data
raw = ucfm.Dataset.read_csv(ucfm.data_path("mbs.csv"))
z, _ = ucfm.prepare(raw, log_columns=["trig", "IR", "GB", "G2"])
post = ucfm.gibbs_run(z, spec, iterations=6000, burn_in=2000, seed=4)
prior = ucfm.sample_prior(spec, ucfm.PriorSpec(), 1_000_000, seed=4, p=z.p)

models = ucfm.parse_models(ucfm.data_path("mbs_models.txt").read_text(), p=8, m=2)
sets = {name: ucfm.expand(a, spec, 8) for name, a in models.items()}
res = ucfm.compare_models(post, prior, sets)
for name, d, pr in zip(res.labels, res.details, res.posterior_probs):
    print(f"{name}: f = {d['f']:.4f}  c = {d['c']:.3g}  BF = {d['bf']:.3g}  PMP = {pr:.3f}")
print("preferred:", res.best())
# The tight bounds on the blood pressure loadings have very little prior
# mass, so a hypothesis that the data support earns a large Bayes factor.
