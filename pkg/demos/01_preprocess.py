"""Preparing the metabolic data for factor analysis.

Four of the eight measurements are strongly right-skewed, so they are
log-transformed before everything is standardized. The KMO value tells us
whether the correlations share enough common variance to bother with a
factor model at all.
"""
import numpy as np

import ucfm
from ucfm.preprocess import factor_upper_bound, kmo_label, partial_correlations

# %% Load the bundled sample (464 subjects, raw scales)
raw = ucfm.Dataset.read_csv(ucfm.data_path("mbs.csv"))
print(raw.n, "rows,", raw.p, "columns:", ", ".join(raw.names))

skew = lambda x: np.mean(((x - x.mean()) / x.std()) ** 3)
for name, col in zip(raw.names, raw.values.T):
    print(f"  {name:>5}  skewness {skew(col):6.2f}")

# %% Log the skewed columns and standardize
z, corr = ucfm.prepare(raw, log_columns=["trig", "IR", "GB", "G2"])
print("\nafter logging:", [f"{skew(c):.2f}" for c in z.values.T])
print("column means ~0:", np.allclose(z.values.mean(axis=0), 0))

np.set_printoptions(precision=2, suppress=True)
print("\ncorrelations\n", corr.values)

# %% Sampling adequacy
# Small partial correlations relative to the raw ones mean the variables hang
# together through common factors rather than pairwise links.
print("\npartial correlations\n", partial_correlations(corr.values))
print(f"\nKMO = {corr.kmo:.3f} ({kmo_label(corr.kmo)})")
print("most factors a p = 8 model can identify:", factor_upper_bound(z.p))
