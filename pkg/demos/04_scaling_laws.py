"""Exact convergence scalings of the corrected scheme on Gaussian data.

With Gaussian data and exact scores every reverse step is affine, so the
terminal KL and the step-weighted discretization budget are computable with
no sampling at all.  Three behaviors fall out:

* the error is linear in the data's intrinsic dimension,
* it is flat in the ambient dimension (the integrator baseline is not),
* the discretization budget decays like 1/K when the grid is refined.
"""

import math

import numpy as np

from revdiff import (
    GaussianLaw,
    ReverseRunConfig,
    build_schedule,
    discretization_error_meter,
    gaussian_kl,
    gaussian_oracle,
    kl_experiment,
    marginal_law,
    spawn_rng,
)


def rank_law(D, d, var=0.25, seed=0):
    rng = spawn_rng(seed, 77)
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    return GaussianLaw(mean=np.zeros(D), factor=q[:, :d] * math.sqrt(var))


def grid(kappa, horizon=10.0, delta=1e-6):
    L = round((horizon - 1.0) / kappa)
    extra = round(math.log(1.0 / delta) / math.log1p(kappa))
    return build_schedule(kappa, L, L + extra)


sched = grid(0.1)
print(f"reference grid: kappa=0.1, T={sched.horizon:.1f}, delta={sched.early_stop:.2e}, K={sched.n_steps}")

print("\n== linear in intrinsic dimension d (ambient D = 32) ==")
for d in (1, 2, 4, 8):
    law = rank_law(32, d, seed=d)
    kl = kl_experiment(law, ReverseRunConfig(schedule=sched, init="data_pT")).value
    print(f"  d={d}: discretization KL = {kl:.6e}   (KL/d = {kl / d:.6e})")

print("\n== flat in ambient dimension D (d = 2) ==")
print(f"  {'D':>4} {'corrected':>14} {'exp. integrator':>16}")
for D in (4, 16, 64, 256):
    law = rank_law(D, 2, seed=D)
    kl_c = kl_experiment(law, ReverseRunConfig(schedule=sched, init="data_pT")).value
    kl_e = kl_experiment(
        law, ReverseRunConfig(schedule=sched, scheme="exponential_integrator", init="data_pT")
    ).value
    print(f"  {D:>4} {kl_c:>14.6e} {kl_e:>16.6e}")
print("  (the corrected column is constant; the baseline grows with D)")

print("\n== O(1/K): halve kappa at fixed T and delta ==")
law = rank_law(8, 2, seed=9)
prev_budget, prev_kl = None, None
for i in range(4):
    s = grid(0.2 / 2**i)
    budget = discretization_error_meter(gaussian_oracle(law), s, 0, None, mode="exact").value
    kl = kl_experiment(law, ReverseRunConfig(schedule=s, init="data_pT")).value
    line = f"  K={s.n_steps:>4}: budget = {budget:.4e}  terminal KL = {kl:.4e}"
    if prev_budget:
        line += f"   factors x{prev_budget / budget:.3f} / x{prev_kl / kl:.3f}"
    print(line)
    prev_budget, prev_kl = budget, kl
print("  (the budget halves per doubling; the terminal KL decays even faster)")

print("\n== the initialization term is invisible at T = 10 ==")
law = rank_law(64, 2, seed=3)
init_kl = gaussian_kl(marginal_law(law, sched.horizon), GaussianLaw.isotropic(64))
print(f"  KL(true noised law at T || N(0, I)) = {init_kl:.3e}")
