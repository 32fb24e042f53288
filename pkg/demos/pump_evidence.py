# %% [markdown]
# # Pump failures: evidence convergence
#
# Ten pumps, failure counts y_n over exposure t_n, rates theta_n ~ Gamma(alpha, beta).
# Learned proposals drive a two-level divide-and-conquer sampler: each pump
# is proposed and resampled locally, then (alpha, beta) is proposed from a
# summary of the merged rates. The prior baseline runs plain SMC.
#
# Training both networks takes about a minute and a half on one core.

# %%
import sys

import numpy as np

from amortsmc import TrainArtifact, train_all
from amortsmc.inference import run_inference
from amortsmc.models import build

bundle = build("pump")
if len(sys.argv) > 1:
    art = TrainArtifact.load(sys.argv[1])
else:
    art = train_all(bundle.model, bundle.inverse, bundle.specs, bundle.train_config, bundle.model_config)

# %% Spread of log evidence over 10 seeds
print(f"{'K':>6} {'prior mean':>11} {'prior sd':>9} {'learned mean':>13} {'learned sd':>11}")
for K in (5, 10, 50, 100, 500, 1000):
    cells = []
    for proposal in ("prior", "learned"):
        z = [run_inference(bundle, proposal, K, s, art).log_evidence for s in range(10)]
        cells += [np.mean(z), np.std(z, ddof=1)]
    print(f"{K:>6} {cells[0]:>11.2f} {cells[1]:>9.2f} {cells[2]:>13.2f} {cells[3]:>11.2f}")
