"""Turn optimization problems into grayscale images.

One instance becomes a K x (A+E+L) matrix of mobility probabilities,
storage ratios and bandwidth ratios, normalized by fixed constants so
every image in a corpus shares the same gray scale.  Larger values are
darker.  Oversized instances are cut into fixed-height sub-images, with
zero-demand phantom rows padding the last block.
"""

from pathlib import Path

import numpy as np

from edgecache import NormConfig, encode, generate_instance, split_subimages, to_grayscale, write_pgm
from edgecache.harness import DATASET_RANGES, evaluation_topology

topo = evaluation_topology()
norm = NormConfig.from_ranges()
print(f"normalization constants: q_max = {norm.q_max}, r_max = {norm.r_max}")

inst = generate_instance(topo, num_flows=5, ranges=DATASET_RANGES, seed=3)
img = encode(inst, norm)
A, E, L = topo.num_access_routers, topo.num_edge_clouds, topo.num_links
print(f"\nfeature image: {img.matrix.shape[0]} x {img.matrix.shape[1]} "
      f"(blocks P 0:{A}, Q {A}:{A+E}, R {A+E}:{A+E+L})")
print("row 0:", np.array2string(img.matrix[0], precision=2, max_line_width=120))

pixels = to_grayscale(img)
print(f"\ngrayscale range: {pixels.min()} (darkest) .. {pixels.max()} (lightest)")
out = Path(__file__).parent / "demo_output"
out.mkdir(exist_ok=True)
write_pgm(out / "instance.pgm", pixels)
print(f"wrote {out / 'instance.pgm'}")

big = generate_instance(topo, num_flows=13, ranges=DATASET_RANGES, seed=4)
blocks = split_subimages(encode(big, norm), rows_per_block=5)
print(f"\na 13-flow image splits into {len(blocks)} blocks of height 5; "
      f"the last carries {blocks[-1].phantom_rows} phantom rows:")
for b, block in enumerate(blocks):
    print(f"  block {b}: {block.matrix.shape[0]} rows, "
          f"{block.num_flows} real flows")
