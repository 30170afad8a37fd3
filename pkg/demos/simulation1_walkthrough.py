"""
Mixed logit on a simulated panel
================================

Simulate a 100-group panel from the standard mixed logit preset, fit it
with conjugating VI and with mean-field DAVI, then compare the two fits on
the ELBO, on recovered heterogeneity and on held-out predictions.

Run with ``python demos/simulation1_walkthrough.py``; it takes about a
minute.
"""
import time

import numpy as np

from cvilogit import (ChoiceModel, cvi_fit, davi_fit, elbo_estimate, heterogeneity,
                      marginal_share_probs, predictive_probs, predictive_report,
                      simulate_dataset, simulation1)
from cvilogit.evaluate import sigma_posterior_mean

# four alternatives, three fixed and three random covariates per item
dgp = simulation1(n_groups=100, n_occasions=100, n_test=30, seed=0)
panel = simulate_dataset(dgp)
train, test = panel.train, panel.test
print(f"{train.n_occasions} training and {test.n_occasions} held-out occasions, "
      f"{dgp.layout.size} global parameters")

# %% fit both approximations from the same seed
tic = time.perf_counter()
cvi = cvi_fit(train, dgp.spec, seed=0)
print(f"CVI: {cvi.n_iter} iterations in {time.perf_counter() - tic:.1f} s")
tic = time.perf_counter()
davi = davi_fit(train, dgp.spec, seed=0)
print(f"DAVI: {davi.n_iter} iterations in {time.perf_counter() - tic:.1f} s")

# the smoothed trace flattens out once the stopping rule fires
smooth = np.asarray(cvi.trace.smoothed)
print("CVI smoothed ELBO every 500 iterations:", np.round(smooth[499::500], 1))

# %% ELBO with common random numbers
model = ChoiceModel(dgp.spec, train)
for fit in (cvi, davi):
    print(f"{fit.method.upper():>4} ELBO (1000 draws): {elbo_estimate(fit, model, 1000, rng=1):.1f}")

# %% heterogeneity at the posterior-mean covariance
truth = heterogeneity(dgp.sigma, train, dgp.spec)
est = heterogeneity(sigma_posterior_mean(cvi, rng=2), train, dgp.spec)
print(f"TH true {truth.TH:.2f}, CVI {est.TH:.2f}")
for j, (a, b) in enumerate(zip(truth.AH, est.AH), start=2):
    print(f"  AH alternative {j}: true {a:.2f}, CVI {b:.2f}")

# %% held-out accuracy against the in-sample choice shares
rows = [("marginal share", predictive_report(marginal_share_probs(train, test), test.choice))]
for fit in (cvi, davi):
    rows.append((fit.method.upper(), predictive_report(predictive_probs(fit, test, rng=3),
                                                       test.choice)))
for name, rep in rows:
    print(f"{name:>15}: log score {rep.log_score:.4f}, weighted F1 {rep.f1:.4f}")
