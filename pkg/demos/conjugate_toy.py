# %% [markdown]
# # Amortized proposal for a conjugate Gaussian
#
# x ~ N(0, 1), y | x ~ N(x, 1). The exact posterior is N(y/2, 1/2) and the
# evidence is N(y; 0, 2), so every number below can be checked by hand.

# %%
import numpy as np

from amortsmc import LearnedProposal, train_all
from amortsmc.graph import var
from amortsmc.inference import run_inference
from amortsmc.models import build, toy_log_evidence, toy_posterior

bundle = build("conjugate-toy")
print(bundle.inverse.describe())

# %% Train q(x | y) on ancestral samples
art = train_all(bundle.model, bundle.inverse, bundle.specs, bundle.train_config, bundle.model_config)
trace = art.traces["factor0"]
print(f"validation NLL {trace[0].validation_nll:.3f} -> {trace[-1].validation_nll:.3f}")

# %% The trained proposal against the exact posterior
prop = LearnedProposal(art, bundle.inverse)
rng = np.random.default_rng(0)
x, y = var("x"), var("y")
for yv in (-2.0, -1.0, 0.0, 1.0, 2.0):
    draws, _ = prop.propose((x,), {y: yv}, rng, 100_000)
    m, s = toy_posterior(yv)
    print(f"y={yv:+.0f}  q mean {draws[x].mean():+.3f} (exact {m:+.3f})  q sd {draws[x].std():.3f} (exact {s:.3f})")

# %% Importance sampling evidence: learned vs prior proposal
exact = toy_log_evidence(1.0)
for proposal in ("prior", "learned"):
    z = [run_inference(bundle, proposal, 100, s, art).log_evidence for s in range(50)]
    print(f"{proposal:8s} K=100  log Z mean {np.mean(z):.4f}  sd {np.std(z):.4f}  (exact {exact:.4f})")
