"""Horizon certificate for the double integrator.

Solves the Riccati equation, estimates the growth constants on a set of
initial states and reports the smallest horizon for which the relaxed
Lyapunov condition is guaranteed.  The closed loop is then simulated at
that horizon to check the decrease numerically.

    python3 demos/certificate.py
"""
import numpy as np

from sdmpc import GridSpec, build_double_integrator, certify, lyapunov_monitor, run_mpc

sys_, cons, cost = build_double_integrator()
K = [[0.3, 0.3], [-0.3, 0.2]]
delta = 0.5

rep = certify(sys_, cost, cons, K, delta, substeps=5)
c = rep.certificate
print(f"gamma={rep.lq.gamma:.4f}  M={rep.M:.4g}  C={rep.C:.4g}  Cbar={rep.Cbar:.4g}")
print(f"certified horizon N_bar={rep.N_bar}  (alpha={c.alpha:.3f})")

for x0 in K:
    run = run_mpc(sys_, cost, cons, np.array(x0), GridSpec(delta, 5, rep.N_bar), t_sim=15.0)
    mon = lyapunov_monitor(run, c.alpha)
    print(f"  x0={x0}: worst residual {mon.worst_residual:+.2e} (budget {mon.slack_budget:.1e})"
          f" -> {'ok' if mon.passed else 'violated'}")
