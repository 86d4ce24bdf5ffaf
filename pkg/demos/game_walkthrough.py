"""How many generators keep the predictor off the spurious feature?

Run: python demos/game_walkthrough.py
"""

from mgr.game import estimate_pc, min_generators, monte_carlo_spurious, p_spurious

pc = estimate_pc(15395, 15169)
print(f"P_c estimated from causal/spurious token counts: {pc:.4f}")

print("\n  n   exact     monte carlo (100k)")
for n in range(1, 12, 2):
    mc = monte_carlo_spurious(n, pc, 100_000, seed=n)
    print(f"{n:3d}   {p_spurious(n, pc):.5f}   {mc.mean:.5f} +- {mc.stderr:.5f}")

for target in (0.3, 0.2, 0.1, 0.05):
    print(f"smallest odd n with p(spurious) <= {target}: {min_generators(target, pc)}")
