"""Check by simulation that the formula sample size delivers the target power.

Run with ``python3 demos/03_power_check.py``; it takes under a minute.
Increase ``REPS`` for tighter Monte Carlo error.
"""
from smartsize.power import PowerScenario, analytic_power, rho_misspec_sweep, run_power

REPS = 500

# %% Assumptions satisfied: power should sit at or above 0.8.
sc = PowerScenario("III", delta=0.5, r_plus=0.4, rho_true=0.3)
est = run_power(sc, reps=REPS, seed=1)
print(f"n = {est.n}: simulated power {est.power:.3f} (mc se {est.mc_se:.3f}),"
      f" large-sample {analytic_power(sc):.3f}")

# %% An AR(1) truth breaks the exchangeable assumption behind the (1 - rho^2)
# factor, and power falls well short.
ar = PowerScenario("III", delta=0.5, r_plus=0.4, rho_true=0.8, violation="ar1")
est = run_power(ar, reps=REPS, seed=1)
print(f"AR(1) truth, rho 0.8, n = {est.n}: power {est.power:.3f}")

# %% Guessing rho too high shrinks n and costs power; guessing low is safe.
rows = rho_misspec_sweep("II", 0.5, 0.4, rho_true_grid=[0.3], rho_guess_grid=[0.0, 0.3, 0.6], reps=200, seed=3)
for row in rows:
    print(f"true - guess = {row['difference']:+.1f}: n = {row['n']}, power {row['power']}")
