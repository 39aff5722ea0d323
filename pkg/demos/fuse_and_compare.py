"""Walkthrough: fuse two checkpoints and inspect their relationship.

Run with: python3 demos/fuse_and_compare.py
"""

import tempfile
from pathlib import Path

from fusekit.fixtures import checkpoint_pair
from fusekit.fusion import cosine_similarity, fuse_pair, swa_average
from fusekit.tensor_store import read_archive, write_archive

# Two synthetic checkpoints whose weight-space angle we control. A pair
# from real training runs would be loaded with read_archive instead.
theta_a, theta_b = checkpoint_pair(target_cosine=0.95, seed=7)

report = cosine_similarity(theta_a, theta_b)
print(f"cosine similarity: {report.cosine:.6f} over {report.dimension} parameters")
print(f"skipped tensors: {report.skipped or 'none'}")

# Convex combination: alpha weights the first checkpoint.
for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
    fused = fuse_pair(theta_a, theta_b, alpha)
    first = fused.names[0]
    print(f"alpha={alpha:.2f}  {first}[0,0,0,0] = {fused[first].ravel()[0]:+.6f}")

# The equal average is the alpha=0.5 special case.
assert swa_average([theta_a, theta_b]) == fuse_pair(theta_a, theta_b, 0.5)
print("equal average matches fuse at alpha=0.5, bit for bit")

# Round trip through the archive format.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "fused.fta"
    write_archive(fuse_pair(theta_a, theta_b, 0.5), path)
    assert read_archive(path) == fuse_pair(theta_a, theta_b, 0.5)
    print(f"archive round trip OK ({path.stat().st_size} bytes)")
