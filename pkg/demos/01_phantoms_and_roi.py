# Phantom pairs, body masks and automatic ROI selection.
# Writes a few PGM slices to ./demo_out so the anatomy can be eyeballed.
from pathlib import Path

import numpy as np

from ssbrgan.phantom import PhantomSpec, generate_phantom_pair, save_pair
from ssbrgan.volume import air_profile, body_masks, export_pgm, normalize_intensity, select_abdominal_roi

out = Path("demo_out")
out.mkdir(exist_ok=True)

# same anatomy, two modalities; B is sampled with fewer slices and the opposite warp
spec = PhantomSpec(seed=42, n_slices=100, n_slices_b=80, warp=0.8, warp_b=-0.8, slice_size=(64, 64))
pair = generate_phantom_pair(spec)
print("A", pair.volume_a.shape, pair.volume_a.modality.name)
print("B", pair.volume_b.shape, pair.volume_b.modality.name)
save_pair(pair, spec, out, "demo")

# the contrast difference lives in vessels and enhancing organs
a_hu = pair.volume_a.intensities.astype(float)
print("mean HU  A %.1f   B %.1f" % (a_hu.mean(), pair.volume_b.intensities.mean()))

# in-body air fraction per slice: lungs at the top, bowel gas further down
frac, valid = air_profile(pair.volume_a)
for z in range(0, pair.volume_a.n_slices, 10):
    print(f"slice {z:3d}  air {frac[z]:.3f}  " + "#" * int(60 * frac[z]))

for name, vol in (("A", pair.volume_a), ("B", pair.volume_b)):
    roi = select_abdominal_roi(vol)
    lm = pair.landmarks[name]
    print(f"{name}: detected ROI {roi.top_index}..{roi.bottom_index}, "
          f"ground truth {lm['roi_top']}..{lm['bowel_end']}")

# body mask of a lung slice vs. a bowel slice
masks = body_masks(pair.volume_a)
print("mask area, slice 5:", masks[5].area, " slice 70:", masks[70].area)

norm = normalize_intensity(pair.volume_a)
for z in (5, 40, 70, 95):
    export_pgm(norm.intensities[z], out / f"phantom_A_{z:03d}.pgm")
print("wrote", sorted(p.name for p in out.glob("*.pgm")))

# where does slice n of A sit in B?  nonlinear because of the warps
for n in (10, 30, 50, 70, 90):
    print(f"A slice {n:2d} -> B position {pair.correspondence[n]:6.2f}   (proportional: {n * 80 / 100:5.1f})")
