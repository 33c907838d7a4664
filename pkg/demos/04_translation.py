# Unpaired contrast translation on phantoms: full method vs position-based pairing.
# About 3 minutes on one core.
from pathlib import Path

import numpy as np

from ssbrgan.experiments import (TRANSLATE_A_SEED, TRANSLATE_B_SEED, VARIANTS, domain_set, paired_test_set,
                                 translation_mse, untranslated_mse)
from ssbrgan.metrics import evaluate_paired
from ssbrgan.ssbr import SsbrConfig, load_ssbr, score_slices, train_ssbr
from ssbrgan.translate import TranslatorConfig, train_translation, translate_volume
from ssbrgan.volume import export_pgm, normalize_intensity, select_abdominal_roi

size = (32, 32)
if Path("demo_ssbr32.ackpt").exists():
    ssbr = load_ssbr("demo_ssbr32.ackpt")
else:
    ssbr = train_ssbr(SsbrConfig(input_size=size, steps=400, augment_shift=2), domain_set(0, 16, size))

vols_a = domain_set(TRANSLATE_A_SEED, 6, size, "A")
vols_b = domain_set(TRANSLATE_B_SEED, 6, size, "B")
for v in vols_a + vols_b:
    v.scores = score_slices(ssbr.model, v.slices)

tests = paired_test_set(size, n=2)
print("untranslated MSE %.5f" % untranslated_mse(tests))

runs = {}
for name in ("full", "pbs"):
    cfg = TranslatorConfig(gen_channels=8, gen_blocks=3, steps=300, seed=0, **VARIANTS[name])
    runs[name] = train_translation(cfg, vols_a, vols_b, ssbr)
    print(name, "last losses:", runs[name].history[-1].line())
    print(name, "test MSE %.5f" % translation_mse(runs[name].state, tests))

# one volume in detail
va, vb = tests[0]
roi = select_abdominal_roi(vb)
fake_b = translate_volume(runs["full"].state, va, "AB", roi=roi)
report = evaluate_paired(normalize_intensity(vb), fake_b, roi)
print(report.to_table())
z = int(roi.indices[len(roi) // 2])
Path("demo_out").mkdir(exist_ok=True)
export_pgm(fake_b.intensities[z], f"demo_out/fake_B_{z:03d}.pgm")
print("background after masking:", np.unique(fake_b.intensities[z][fake_b.intensities[z] < -0.999])[:3])
