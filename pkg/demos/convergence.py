"""Consensus and split ADMM against their centralized solutions, round by round.

    python demos/convergence.py
"""
import numpy as np

from cfbeam import consensus as cs
from cfbeam import split as sp

g = np.random.default_rng(0)
U, N, D, O = 3, 200, 60, 8
lam, rho = 2.0 ** -3, 0.1

A = [g.standard_normal((N, D)) / np.sqrt(N * U) for _ in range(U)]
Y = [g.standard_normal((N, O)) for _ in range(U)]
C = [cs.gram_inverse(a, rho) for a in A]
AtY = [a.T @ y for a, y in zip(A, Y)]
W_c = cs.centralized_solution(A, Y, lam)
st = cs.ConsensusState.zeros(U, D, O, rho, lam)
print("consensus: round  rel. error of W_0")
for t in range(1, 101):
    st = cs.consensus_round(st, C, AtY)
    if t in (1, 5, 10, 20, 50, 100):
        print(f"           {t:5d}  {np.linalg.norm(st.W0 - W_c) / np.linalg.norm(W_c):.2e}")

Ab = [g.standard_normal((N, d)) / np.sqrt(N) for d in (40, 60, 50)]
Yb = g.standard_normal((N, O))
f_c = sp.split_objective(Ab, sp.central_split_solution(Ab, Yb, lam), Yb, lam)
print("split:     round  objective gap   (budget None / 4 of 8)")
obj_d, obj_s = [], []
sp.run_split(Ab, Yb, rho, lam, 50, objective=obj_d)
sp.run_split(Ab, Yb, rho, lam, 50, budget=4, objective=obj_s)
for t in (1, 5, 10, 20, 50):
    print(f"           {t:5d}  {(obj_d[t - 1] - f_c) / f_c:.2e}      {(obj_s[t - 1] - f_c) / f_c:.2e}")
