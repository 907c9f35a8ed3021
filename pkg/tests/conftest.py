import numpy as np
import pytest


def finite_difference_max_rel_err(make_loss, tensors, rng, h=1e-5, samples=8):
    """Central finite differences vs analytic gradients.

    ``make_loss`` rebuilds the graph from the tensors' current data and
    returns a scalar Tensor. A random subset of entries per tensor is
    perturbed. Relative error uses max(|fd|, |analytic|, 1e-6) as the
    denominator so near-zero gradients do not blow up the ratio.
    """
    for t in tensors:
        t.zero_grad()
    loss = make_loss()
    loss.backward()
    grads = [t.grad.copy() for t in tensors]

    max_err = 0.0
    for t, grad in zip(tensors, grads):
        flat = t.data.reshape(-1)
        n = min(samples, flat.size)
        idxs = rng.choice(flat.size, size=n, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(make_loss().data)
            flat[i] = orig - h
            lm = float(make_loss().data)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            an = grad.reshape(-1)[i]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            max_err = max(max_err, err)
    return max_err


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
