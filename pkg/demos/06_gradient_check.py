"""Finite-difference gradient checks for every trainable piece, in float64."""
from xdlf.gradcheck import run

worst = {}
for r in run(seed=0):
    key = r.suite
    if key not in worst or r.max_rel_error > worst[key].max_rel_error:
        worst[key] = r
for suite, r in worst.items():
    print(f"{suite:10s} worst tensor {r.case}/{r.tensor}: rel err {r.max_rel_error:.2e} (tol {r.tol:.0e})")
