"""
How the mixing ratio moves from source to target
================================================

The ratio follows ``lambda_n = n(1 - q)/N + q * lambda_{n-1}``: a linear ramp
blended with its own past. ``q`` approaches 1 only when the mixed batch sits
much closer to the source than to the target (``d_s`` small), and then the
ramp settles into a lag behind ``n/N`` of ``q / ((1 - q) N)``. For comparable
distances ``q`` is tiny at ``T = 0.05`` and the ratio is essentially linear.
The dots are the jittered, clamped draws actually used for mixing.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mdan.mixup import SchedulerState, scheduler_step, source_similarity

OUT = Path("demo_output")
OUT.mkdir(exist_ok=True)

N = 200
fig, ax = plt.subplots(figsize=(7, 3.5))
for d_s, d_t in [(0.0005, 1.0), (0.002, 1.0), (1.0, 1.0)]:
    q = source_similarity(d_s, d_t, T=0.05)
    rng = np.random.default_rng(0)
    state = SchedulerState(N=N)
    lam_n, lam_tilde = [], []
    for _ in range(N):
        lt, state = scheduler_step(state, d_s, d_t, rng)
        lam_n.append(state.lambda_prev)
        lam_tilde.append(lt)
    line, = ax.plot(lam_n, label=f"d_s/d_t = {d_s / d_t:g}, q = {q:.3g}")
    ax.plot(lam_tilde, ".", ms=1, color=line.get_color(), alpha=0.3)
    lag = N // 2 / N - lam_n[N // 2 - 1]
    print(f"d_s={d_s}, d_t={d_t}: q={q:.4g}, lag behind n/N at n={N // 2}: {lag:.4f} "
          f"(steady state {q / ((1 - q) * N):.4f})")

ax.set_xlabel("iteration n")
ax.set_ylabel("mixing ratio")
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(OUT / "ratio_schedule.png", metadata={"Software": None})
print("wrote", OUT / "ratio_schedule.png")
