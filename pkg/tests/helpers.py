"""Shared test utilities: finite-difference gradient checks and tiny models."""

import numpy as np
import torch


def sample_parameter_entries(module, n, rng):
    """``n`` random (parameter, flat index) pairs, spread over every trainable tensor."""
    params = [p for p in module.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    picks = []
    for _ in range(n):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        picks.append((params[k], int(rng.integers(params[k].numel()))))
    return picks


def finite_difference_check(module, loss_fn, n=100, h=1e-6, seed=0):
    """Relative error between autograd and central differences on ``n`` sampled entries.

    ``loss_fn()`` must be deterministic and return a float64 scalar tensor.
    Returns ``(rel_err, n_checked)``.
    """
    rng = np.random.default_rng(seed)
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    entries = sample_parameter_entries(module, n, rng)
    auto, numeric = [], []
    with torch.no_grad():
        for p, i in entries:
            flat = p.view(-1)
            auto.append(float(p.grad.view(-1)[i]) if p.grad is not None else 0.0)
            old = float(flat[i])
            flat[i] = old + h
            up = float(loss_fn())
            flat[i] = old - h
            down = float(loss_fn())
            flat[i] = old
            numeric.append((up - down) / (2 * h))
    auto, numeric = np.array(auto), np.array(numeric)
    rel = np.linalg.norm(auto - numeric) / max(np.linalg.norm(numeric), 1e-12)
    return rel, len(entries)


def small_backbone(dtype=torch.float64, seed=0):
    """A narrow backbone with a randomised output layer, so the U-Net branch is not identically zero."""
    from envvc.backbone.unet import Backbone

    torch.manual_seed(seed)
    model = Backbone(d_cond=16, widths=(16, 16, 16), heads=2, adapter_layers=1).to(dtype)
    with torch.no_grad():
        model.unet.out.weight.normal_(0, 0.05)
        model.unet.out.bias.normal_(0, 0.05)
        model.null_env.normal_()
        model.null_speech.normal_()
    return model.eval()
