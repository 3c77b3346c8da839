"""
Turn a saved tree into a labelled volume and a few noisy training images.

    python3 demos/raster_dataset.py [tree_prefix] [out_dir]

The default prefix points at the output of desk_scale_tree.py.
"""

import sys
from pathlib import Path

import numpy as np

from arteriogen import domain, raster
from arteriogen.tree import load_tree

prefix = sys.argv[1] if len(sys.argv) > 1 else "demo_out/tree_"
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(exist_ok=True)

tree = load_tree(prefix)
label = raster.rasterize(tree, (96, 96, 96), 100.0)
domain.save_mask(label, out / "label.mask")
# at 100 um voxels only the larger vessels survive; terminal arterioles are ~10 um
print(f"{label.count()} foreground voxels from {tree.n_edges} vessels")

radii = np.array(list(tree.radius.values()))
print(f"vessels wider than half a voxel: {np.sum(radii > 50.0)}")

for i, (sigma, sp) in enumerate([(0.0, 0.0), (0.1, 0.0), (0.2, 0.02)]):
    img = raster.add_noise(label, sigma, sp, seed=i)
    domain.save_volume(img, label.spacing, label.origin, out / f"image_{i}.vol")
    raster.write_pgm(raster.max_intensity_projection(img, 2), out / f"mip_{i}.pgm")
    print(f"image_{i}: sigma {sigma}, salt and pepper {sp}, mean intensity {img.mean():.3f}")
