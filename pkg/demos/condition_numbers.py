"""Invertibility diagnostics and condition numbers of the benchmarks.

For both benchmark models this prints the H2 norm (by both routes), the
inverse-operator norm of the error-system block operator, and the
condition number with all of its factors.

Run:  python3 demos/condition_numbers.py
"""

from birka import (FlowModelParams, HeatModelParams, build_flow_model,
                   build_heat_model, condition_number, h2_norm_kron,
                   h2_norm_lyap, qhat_diagnostics)

for sys_full in (build_heat_model(HeatModelParams(K=10)),
                 build_flow_model(FlowModelParams(N=10))):
    diag = qhat_diagnostics(sys_full)
    k, factors = condition_number(sys_full, diagnostics=diag,
                                  return_factors=True)
    print(f"model: {sys_full.label} (n = {sys_full.n})")
    print(f"  H2 norm (kron):  {h2_norm_kron(sys_full):.6f}")
    print(f"  H2 norm (lyap):  {h2_norm_lyap(sys_full):.6f}")
    print(f"  ||Q^-1||:        {diag.qinv_norm:.6e}")
    print(f"  condition number: {k:.5f}")
    for name, value in factors.items():
        print(f"    {name:>16}: {value:.6e}")
    print()
