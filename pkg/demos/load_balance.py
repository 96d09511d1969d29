"""Load ratio and auxiliary loss as the capacity factor grows.

Run with ``python3 demos/load_balance.py``.
"""

from moeroute.harness.synthetic import SyntheticSpec, sweep

base = SyntheticSpec(128, 16, 2, 1.0, "peaked", 4.0, "softmax", 1.0, seed=0)
rows = sweep(base, "c_f", ["1.0", "1.25", "1.5", "2.0"], trials=5, routers=["greedy", "maxscore", "expert_choice"])

# drop r2 counts tokens whose second-ranked expert was not assigned,
# even when the slot went to another expert
print(f"{'c_f':>5} {'router':<14}{'drop r2':>9}{'load':>8}{'aux':>11}")
for (_, value, stat), r in rows:
    if stat == "mean":
        print(f"{value:>5} {r.router:<14}{r.drop_r2:9.4f}{r.mean_load_ratio:8.4f}{r.aux_loss:11.3e}")
