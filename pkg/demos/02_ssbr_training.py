# The slice-score regressor: loss values by hand, then a short training run.
import numpy as np
import torch

from ssbrgan.experiments import HELDOUT_SEED, domain_set, ssbr_quality
from ssbrgan.ssbr import SsbrConfig, loss_anat, loss_norm, loss_order, loss_ssbr, train_ssbr

# order loss: softplus of negative neighbour differences
print("L_order(-0.5, 0, 0.5) =", float(loss_order([[-0.5, 0.0, 0.5]])))
print("L_order(0.5, 0, -0.5) =", float(loss_order([[0.5, 0.0, -0.5]])), "(reversed is worse)")
print("L_order equal scores  =", float(loss_order([[0.1, 0.1, 0.1]])), "= 2 log 2 =", 2 * np.log(2))

# norm loss pins the end slices to -1 and +1
print("L_norm(-1, .., 1) =", float(loss_norm([[-1.0, 0.2, 1.0]])))
print("L_norm(0, .., 0)  =", float(loss_norm([[0.0, 0.2, 0.0]])))

# anatomy loss: score steps should follow the body-mask change
print("L_anat =", float(loss_anat([[0.0, 0.1]], [[0.2]])))

s = torch.tensor([[-0.9, -0.3, 0.4, 0.95]], dtype=torch.float64)
total, parts = loss_ssbr(s, torch.tensor([[0.5, 0.6, 0.5]], dtype=torch.float64))
print("weighted total", float(total), "parts", [round(float(p), 5) for p in parts])

# a short run at 32 px; the acceptance suite trains longer at 64 px
size = (32, 32)
train = domain_set(0, 16, size)          # 16 anatomies, alternating contrast / non-contrast
cfg = SsbrConfig(input_size=size, steps=400, augment_shift=2)
model = train_ssbr(cfg, train)
print("\n".join(model.log_lines()[::100]))

q = ssbr_quality(model.model, domain_set(HELDOUT_SEED, 6, size))
print("held-out Spearman:", np.round(q.spearman, 4))
print("mean |s_first + 1| = %.3f   mean |s_last - 1| = %.3f" % (q.mean_first_err, q.mean_last_err))
model.save("demo_ssbr32.ackpt")
