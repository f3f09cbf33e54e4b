"""Finite-difference gradient check for the cursor CNN.

Central differences are only meaningful where the loss is smooth over the
probe interval. ReLU and max-pool make the loss piecewise smooth, so for each
coordinate the probe width starts at 1e-5 and shrinks tenfold while the
activation pattern (ReLU signs, pool winners) differs between x-h, x and x+h.
"""

import numpy as np

from screenschema.cursor import CnnParams, _forward, loss_and_grad, synth_dataset

from oracles import relative_error

H0 = 1e-5
H_MIN = 1e-9


def _loss_and_pattern(flat, sample):
    logits, (_, z1, arg1, _, z2, arg2, _) = _forward(CnnParams.from_flat(flat), sample.patch)
    z = logits - logits.max()
    loss = float(np.log(np.exp(z).sum()) - z[sample.label_cell])
    return loss, ((z1 > 0).tobytes(), arg1.tobytes(), (z2 > 0).tobytes(), arg2.tobytes())


def gradient_check(flat, sample):
    """Return (worst relative error, number of coordinates that needed a smaller h)."""
    _, grad = loss_and_grad(CnnParams.from_flat(flat), sample)
    analytic = grad.flat()
    _, base = _loss_and_pattern(flat, sample)
    worst, shrunk = 0.0, 0
    x = flat.copy()
    for i in range(len(x)):
        h = H0
        while True:
            orig = x[i]
            x[i] = orig + h
            up, pat_up = _loss_and_pattern(x, sample)
            x[i] = orig - h
            down, pat_down = _loss_and_pattern(x, sample)
            x[i] = orig
            if (pat_up == base and pat_down == base) or h <= H_MIN:
                break
            h /= 10
        shrunk += h < H0
        numeric = (up - down) / (2 * h)
        # gradients below 1e-6 are compared on an absolute scale
        worst = max(worst, relative_error(analytic[i], numeric, floor=1e-6))
    return worst, shrunk


def check_seed(seed):
    rng = np.random.default_rng(seed)
    flat = CnnParams.init(seed).flat()
    # perturb biases away from zero so every parameter group gets a non-trivial gradient
    flat = flat + rng.normal(0.0, 0.05, flat.shape)
    sample = synth_dataset(rng, 1)[0]
    return gradient_check(flat, sample)
