"""Analytic (autograd) vs central-difference gradients, one random instance per seed.

Every case returns the norm-wise relative error for one instance.
"""

import numpy as np
import torch

from nrvqa.losses import BatchOutputs, LossConfig, gc_loss, l1_loss, mse_loss, rank_loss, total_loss
from nrvqa.spatial import BackboneSpec, SpatialEncoder, StubBackbone
from nrvqa.temporal import TemporalFusion

from oracles import central_diff, param_central_diff, rel_error


def _autograd(f, x):
    xt = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    f(xt).backward()
    return xt.grad.numpy()


def _numeric(f, x):
    return central_diff(lambda v: float(f(torch.tensor(v, dtype=torch.float64))), x)


def _sizes(rng):
    N = 2 * int(rng.integers(2, 4))  # 4 or 6
    D = int(rng.integers(2, 9))
    return N, D


def gc_case(seed):
    rng = np.random.default_rng(seed)
    N, D = _sizes(rng)
    z = rng.normal(size=(N, D))
    cfg = LossConfig(tau=float(rng.uniform(0.1, 1.0)))
    f = lambda x: gc_loss(x, cfg)
    return rel_error([_autograd(f, z)], [_numeric(f, z)])


def _off_kink(rng, n, margin):
    while True:
        p, l = rng.normal(size=n), rng.normal(size=n)
        gaps = [margin - (p[i] - p[j]) * (l[i] - l[j]) for i in range(n) for j in range(i + 1, n)]
        if min(abs(g) for g in gaps) > 1e-3:
            return p, l


def rank_case(seed):
    rng = np.random.default_rng(seed)
    N, _ = _sizes(rng)
    margin = float(rng.uniform(0.1, 1.0))
    p, l = _off_kink(rng, N, margin)
    f = lambda x: rank_loss(x, torch.tensor(l), margin)
    return rel_error([_autograd(f, p)], [_numeric(f, p)])


def mse_case(seed):
    rng = np.random.default_rng(seed)
    N, _ = _sizes(rng)
    p, l = rng.normal(size=N), rng.normal(size=N)
    f = lambda x: mse_loss(x, torch.tensor(l))
    return rel_error([_autograd(f, p)], [_numeric(f, p)])


def l1_case(seed):
    rng = np.random.default_rng(seed)
    N, _ = _sizes(rng)
    l = rng.normal(size=N)
    p = l + rng.choice([-1, 1], N) * rng.uniform(0.05, 1.0, N)  # residuals bounded away from 0
    f = lambda x: l1_loss(x, torch.tensor(l))
    return rel_error([_autograd(f, p)], [_numeric(f, p)])


def total_case(seed):
    rng = np.random.default_rng(seed)
    N, D = _sizes(rng)
    margin = float(rng.uniform(0.1, 1.0))
    p, l = _off_kink_fixed(rng, rng.normal(size=N), rng.normal(size=N), margin)
    z = rng.normal(size=(N, D))
    cfg = LossConfig(tau=float(rng.uniform(0.1, 1.0)), margin=margin,
                     lambda1=float(rng.uniform(0.1, 1)), lambda2=float(rng.uniform(0.1, 1)))
    lt = torch.tensor(l)

    def f(zp):
        zz, pp = zp[: N * D].reshape(N, D), zp[N * D:]
        return total_loss(BatchOutputs(zz, pp, lt), cfg)[0]

    x = np.concatenate([z.ravel(), p])
    return rel_error([_autograd(f, x)], [_numeric(f, x)])


def _off_kink_fixed(rng, p, l, margin):
    n = len(p)
    for _ in range(100):
        gaps = [margin - (p[i] - p[j]) * (l[i] - l[j]) for i in range(n) for j in range(i + 1, n)]
        if min(abs(g) for g in gaps) > 1e-3 and np.abs(p - l).min() > 1e-3:
            return p, l
        p = p + rng.normal(scale=0.01, size=n)
    raise RuntimeError("could not move off the kinks")


def spatial_case(seed):
    """Stub spatial path, gradients of a random linear read-out w.r.t. the projection weights."""
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    backbone = StubBackbone(BackboneSpec(stage_dims=[(4, 4, 6), (2, 2, 8)], input_size=(8, 8), seed=seed))
    D = int(rng.choice([4, 8, 16]))
    tokens = int(rng.choice([1, 2, 4]))
    enc = SpatialEncoder(backbone, target_tokens=tokens, token_dim=8, embed_dim=D,
                         fusion_layers=1, fusion_heads=2).double().train()
    frames = torch.tensor(rng.uniform(0, 1, size=(2, 3, 8, 8)))
    readout = torch.tensor(rng.normal(size=(2, D)))
    params = [*enc.pooling.proj.parameters(), enc.pooling.scale, enc.proj.weight, enc.proj.bias]

    def f():
        return float((enc(frames) * readout).sum())

    enc.zero_grad()
    (enc(frames) * readout).sum().backward()
    analytic = [p.grad.detach().clone().numpy() for p in params]
    numeric = [g.numpy() for g in param_central_diff(f, params)]
    return rel_error(analytic, numeric)


def temporal_case(seed):
    """One-layer temporal fusion, gradients of the score w.r.t. encoder, positions and head."""
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    D = int(rng.choice([4, 8, 16]))
    T = int(rng.integers(1, 5))
    fusion = TemporalFusion(D, layers=1, heads=2, max_frames=4).double().train()
    seq = torch.tensor(rng.normal(size=(2, T, D)))
    weights = torch.tensor(rng.normal(size=2))
    params = [p for p in fusion.parameters()]

    def f():
        return float((fusion(seq) * weights).sum())

    fusion.zero_grad()
    (fusion(seq) * weights).sum().backward()
    analytic = [(p.grad if p.grad is not None else torch.zeros_like(p)).detach().clone().numpy() for p in params]
    numeric = [g.numpy() for g in param_central_diff(f, params)]
    return rel_error(analytic, numeric)


CASES = {
    "gc_loss": gc_case,
    "rank_loss": rank_case,
    "mse": mse_case,
    "l1": l1_case,
    "total_loss": total_case,
    "spatial_path": spatial_case,
    "temporal_path": temporal_case,
}
