"""Walkthrough: coefficient search and the cyclic learning-rate table.

Run with: python3 demos/search_and_schedule.py
"""

from fusekit.schedule import CosineCycleSchedule, emit_schedule
from fusekit.search import Evaluator, grid_search_alpha, random_simplex_search

# Pretend evaluation results for each alpha on the 0.05 grid: a bump
# peaking at 0.35, as if interpolation helped up to a point.
table = {a / 20: 0.7 - (a / 20 - 0.35) ** 2 for a in range(21)}
evaluator = Evaluator.from_table(table)

result = grid_search_alpha(None, None, evaluator)
print(f"exhaustive grid: best alpha {result.best[0]:.2f} score {result.best_score:.4f}")

fast = grid_search_alpha(None, None, evaluator, early_stop=True)
print(f"early stop evaluated {len(fast.evaluations)} of 21 points, "
      f"same best alpha {fast.best[0]:.2f}")

# With three or more weights the grid becomes a simplex; random search
# always evaluates the uniform (equal-average) vector first.
scorer = Evaluator.from_function(lambda c: c[0] * 0.6 + c[1] * 0.3 + c[2] * 0.1)
simplex = random_simplex_search(None, scorer, trials=25, seed=0, num_weights=3)
print(f"simplex search best {tuple(round(c, 3) for c in simplex.best)} "
      f"score {simplex.best_score:.4f}")

# The checkpoint-collection schedule: ten cosine cycles, snapshots at
# the start and at every cycle end give eleven weights to fuse.
schedule = CosineCycleSchedule(start_lr=0.005, iterations_per_cycle=100, cycles=10)
rows = emit_schedule(schedule, checkpoint_epochs=list(range(11)))
marks = [r.iteration for r in rows if r.checkpoint]
print(f"\n{len(marks)} checkpoint positions: {marks}")
print(f"lr at cycle start {rows[0].lr:.5f}, at cycle end {rows[99].lr:.8f}")
