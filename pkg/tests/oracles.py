"""Brute-force reference computations shared by the unit and acceptance tests."""
import numpy as np
import torch


def finite_difference_check(module, loss_fn, h=1e-6):
    """Compare autograd gradients with central differences for every parameter.

    Returns ``{name: relative error}`` where the error of one array is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12)``.
    """
    module.zero_grad()
    loss_fn().backward()
    errors = {}
    with torch.no_grad():
        for name, p in module.named_parameters():
            analytic = p.grad.detach().clone().reshape(-1)
            numeric = torch.zeros_like(analytic)
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
            scale = max(float(analytic.abs().max()), float(numeric.abs().max()), 1e-12)
            errors[name] = float((analytic - numeric).abs().max()) / scale
    return errors


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    return float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))


def rms_envelope(x, rate, win_ms=25.0):
    """RMS in consecutive non-overlapping windows."""
    n = int(round(rate * win_ms / 1000))
    k = len(x) // n
    return np.sqrt(np.mean(np.asarray(x[:k * n], dtype=np.float64).reshape(k, n) ** 2, axis=1))


def iterate_forward(x0, betas, rng):
    """Compose single Gaussian transitions ``x_k = sqrt(1-b_k) x_{k-1} + sqrt(b_k) n_k``."""
    x = np.array(x0, dtype=np.float64)
    for b in betas:
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
    return x
