"""
Mean exit time and escape probability, true vs learned
======================================================

For the jump-diffusion of the previous demo, solve

    generator u = -1 in D, u = 0 outside           (mean exit time)
    generator p = 0 in D, p = 1{x >= 2} outside    (escape to the right)

on D = (-2, 2) for the true and the learned coefficients, and plot both.
"""
from pathlib import Path

from levykoop import (Domain, Grid, LevySpec, SdeModel, build_basis, estimate_generator,
                      field_error, from_terms, generate_snapshots, identify, solve_met_ep)
from levykoop.nonlocal_pde import write_svg

basis = build_basis(1, 5)
true = SdeModel([from_terms(basis, {"x": 4, "x^3": -1})], [from_terms(basis, {"x": 1})],
                sigma2=[1.0], levy=LevySpec(1.0, 1.0))
snaps = generate_snapshots(true, [(-2, 2)], M=10**6, dt=0.01, seed=0)
learned = identify(estimate_generator(snaps, basis), "levy", 1.0, 1.0, p2=1, bounds=[(-2, 2)])

domain, grid = Domain([(-2, 2)], target="right"), Grid(400)
met_t, ep_t = solve_met_ep(true, domain, grid)
met_l, ep_l = solve_met_ep(learned, domain, grid)

print("mean exit time      :", field_error(met_t, met_l))
print("escape probability  :", field_error(ep_t, ep_l))
print(f"u(0) true {met_t([[0.0]])[0]:.4f}, learned {met_l([[0.0]])[0]:.4f}")

out = Path("out/demo_04")
out.mkdir(parents=True, exist_ok=True)
write_svg(out / "met.svg", [met_t, met_l], ["true", "learned"], "mean exit time")
write_svg(out / "ep.svg", [ep_t, ep_l], ["true", "learned"], "escape probability")
print(f"plots in {out}/")
