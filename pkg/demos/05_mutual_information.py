"""Neural estimation of mutual information on correlated Gaussians.

For unit-variance Gaussians with correlation rho the true value is
-0.5 * log(1 - rho^2) nats.
"""
import numpy as np

from pmu_events.infoload import MieNet, fit_mie

rng = np.random.default_rng(0)
for rho in (0.0, 0.5, 0.8):
    x = rng.standard_normal(3000)
    z = rho * x + np.sqrt(1 - rho ** 2) * rng.standard_normal(3000)
    _, est, raw, _ = fit_mie(MieNet.for_vectors(1, 1), x, z, steps=1500, batch_size=256, seed=1)
    true = -0.5 * np.log(1 - rho ** 2)
    print(f"rho={rho:.1f} true={true:.4f} estimate={est:.4f} raw={raw:.4f}")
