# %% [markdown]
# # Factorial HMM: surviving lineages
#
# Twenty on/off devices, each drawing a fixed load, summed under Gaussian
# noise. A bootstrap filter proposes from the switching prior and collapses
# onto a single lineage almost at once. A learned proposal that sees y_t
# keeps more lineages alive to the end of the episode.
#
# Full-size training takes several minutes; pass an artifact path to skip it.

# %%
import sys

import numpy as np

from amortsmc import TrainArtifact, train_all
from amortsmc.inference import run_inference
from amortsmc.models import build
from amortsmc.smc import unique_ancestries

bundle = build("fhmm")
if len(sys.argv) > 1:
    art = TrainArtifact.load(sys.argv[1])
else:
    art = train_all(bundle.model, bundle.inverse, bundle.specs, bundle.train_config, bundle.model_config)

# %% Unique ancestries per step, K=100, averaged over 10 seeds
traces = {}
for proposal in ("prior", "learned"):
    runs = [run_inference(bundle, proposal, 100, s, art) for s in range(10)]
    traces[proposal] = np.mean([[unique_ancestries(ps, t) for t in range(1, 31)] for ps in runs], axis=0)
    z = [ps.log_evidence for ps in runs]
    print(f"{proposal:8s} log Z mean {np.mean(z):9.2f}  sd {np.std(z, ddof=1):7.2f}")

print("step  prior  learned")
for t in range(0, 30, 3):
    print(f"{t + 1:>4} {traces['prior'][t]:>6.1f} {traces['learned'][t]:>8.1f}")
