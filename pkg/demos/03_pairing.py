# Position-based vs score-based slice pairing on warped phantoms.
# Uses the checkpoint from 02_ssbr_training.py if present.
from pathlib import Path

import numpy as np

from ssbrgan.experiments import domain_set, pairing_offsets
from ssbrgan.pairing import format_pair_table, make_paired_batch, make_pbs_batch, pbs_pair
from ssbrgan.phantom import PhantomSpec, anatomical_offset, generate_phantom_pair
from ssbrgan.ssbr import SsbrConfig, load_ssbr, prepare_volume, train_ssbr

size = (32, 32)
if Path("demo_ssbr32.ackpt").exists():
    ssbr = load_ssbr("demo_ssbr32.ackpt")
else:
    ssbr = train_ssbr(SsbrConfig(input_size=size, steps=400, augment_shift=2), domain_set(0, 16, size))

# the proportional rule
print("pbs_pair(50, 100, 60) =", pbs_pair(50, 100, 60))
print("pbs_pair(99, 100, 60) =", pbs_pair(99, 100, 60))

spec = PhantomSpec(seed=2024, n_slices=100, n_slices_b=80, warp=0.8, warp_b=-0.8, slice_size=size)
pair = generate_phantom_pair(spec)
va = prepare_volume(pair.volume_a, size)
vb = prepare_volume(pair.volume_b, size)

rng = np.random.default_rng(0)
batch = make_paired_batch(va, vb, ssbr.model, 8, rng, size)
offsets = [anatomical_offset(p, pair.correspondence) for p in batch.indices]
print(format_pair_table(batch, offsets))

pbs = make_pbs_batch(va, vb, 8, rng, size)
print(format_pair_table(pbs, [anatomical_offset(p, pair.correspondence) for p in pbs.indices]))

# averaged over a few anatomies: warped and unwarped
for warp in (0.8, 0.0):
    res = []
    for seed in range(5):
        n_b = 80 if warp else 100
        res.append(pairing_offsets(ssbr.model, PhantomSpec(seed=seed, n_slices=100, n_slices_b=n_b, warp=warp,
                                                           warp_b=-warp, slice_size=size), j=64, seed=seed))
    s, p = np.mean(res, axis=0)
    print(f"warp {warp}: mean offset SSBR {s:.2f}  PBS {p:.2f} slices")
