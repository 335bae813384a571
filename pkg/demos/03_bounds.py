"""How soft-thresholding tightens the generalization and estimation bounds.

Each layer's threshold removes lam * T^(l) / m from the complexity term, so
the ISTA bound sits below the ReLU one whenever some coordinates are
thresholded (T > 0). We print both as depth grows, show that keeping every
layer's norm below the design rule stops the bound from growing with depth,
and evaluate the local (fast-rate) estimation bound.
"""

from unrollgen.bounds import (
    BoundInputs,
    design_rule_max_B,
    ee_bound,
    ee_fixed_point,
    ge_bound_admm,
    ge_bound_ista,
    ge_bound_ista_simplified,
    ge_bound_relu,
)

m, lam, B0, T = 100, 0.5, 1.0, 2.0
print(" L   ReLU GE   ISTA GE   ADMM GE")
for L in (2, 4, 6, 8):
    inp = BoundInputs(B0=B0, B=1.05, lam=lam, gamma=0.5, m=m, L=L, T=T)
    ista = ge_bound_ista(inp)
    flag = "" if ista.valid else "  (T outside its interval)"
    print(f"{L:2d} {ge_bound_relu(inp).value:9.4f} {ista.value:9.4f} {ge_bound_admm(inp).value:9.3f}{flag}")

rule = design_rule_max_B(lam, T, m, B0)
print(f"\ndesign rule: uniform B <= {rule:.3f} keeps the simplified ISTA bound flat or falling")
for B in (rule, rule + 0.05):
    seq = [ge_bound_ista_simplified(B0, B, lam, m, L, T).value for L in range(0, 11, 2)]
    print(f"B={B:.3f}: " + " ".join(f"{v:.3f}" for v in seq))

inp = BoundInputs(B0=B0, B=1.05, lam=lam, m=m, L=4, T=T, C=1.0, alpha=1.0, n_x=64)
for arch in ("relu", "ista"):
    r = ee_fixed_point(arch, inp).value
    print(f"{arch}: r* = {r:.4f}, estimation bound = {ee_bound(r, inp.C, 1.0, m, inp.n_x):.4f}")
