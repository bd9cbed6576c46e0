"""
The training objective, term by term
=====================================

Evaluates each loss on tiny batches where the answer can be worked out
on paper, then the weighted total.
"""

import math

import torch

from nrvqa import BatchOutputs, LossConfig, gc_loss, gc_pair_term, rank_loss, total_loss

# A batch of N = 4 embeddings. Rows 0-1 come from the lower bitrate tier
# (group A), rows 2-3 from the higher tier (group B).
e1 = [1.0, 0.0]
e2 = [0.0, 1.0]
z = torch.tensor([e1, e1, e2, e2], dtype=torch.float64)

# Anchor 0 with partner 1: similarity 1 to its partner, 0 to both members
# of group B. At tau = 1 the term is -log(e / (1 + 1)) = log 2 - 1.
cfg = LossConfig(tau=1.0, p=0.5)
print("pair term (0, 1):", float(gc_pair_term(0, 1, z, cfg)), "expected", math.log(2) - 1)

# Four ordered same-group pairs, each contributing the same amount.
print("group loss:", float(gc_loss(z, cfg)), "expected", 4 * (math.log(2) - 1))

# Collapsed embeddings carry no tier information: every term is log 2.
flat = torch.ones(4, 2, dtype=torch.float64)
print("collapsed:", float(gc_loss(flat, cfg)), "expected", 4 * math.log(2))

# Lower temperatures sharpen the softmax; the log-space evaluation stays
# finite even where exp(1 / tau) would not fit in float32.
for tau in (1.0, 0.1, 0.01):
    print(f"tau={tau:<5}", float(gc_loss(z.float(), LossConfig(tau=tau))))

# Margin ranking: one pair whose prediction order disagrees with its labels.
pred = torch.tensor([0.0, 0.5], dtype=torch.float64)
labels = torch.tensor([1.0, 0.0], dtype=torch.float64)
print("rank hinge:", float(rank_loss(pred, labels, margin=0.2, pairs=[(0, 1)])), "expected 0.7")

# The total combines MSE, L1 and the two weighted auxiliary terms.
scores = torch.tensor([40.0, 45.0, 70.0, 80.0], dtype=torch.float64)
vmaf = torch.tensor([35.0, 50.0, 75.0, 85.0], dtype=torch.float64)
value, parts = total_loss(BatchOutputs(z, scores, vmaf), LossConfig(tau=0.1), label_span=100.0)
print({k: round(v, 4) for k, v in parts.as_dict().items()})

# Setting both weights to zero leaves plain MSE + L1, the ablation arm.
_, plain = total_loss(BatchOutputs(z, scores, vmaf), LossConfig(lambda1=0.0, lambda2=0.0), 100.0)
print("ablated:", plain.as_dict())
