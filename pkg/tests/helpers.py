"""Shared test utilities: finite-difference oracles and friends."""

import numpy as np


def finite_difference_check(loss_fn, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(cache)`` must run the forward pass and return the scalar
    loss; with ``cache=True`` it must also populate the gradient buffers.
    Analytic gradients are taken once at the base point; the numeric side
    re-evaluates the loss only.
    """
    for p in params:
        p.grad[...] = 0.0
    loss_fn(cache=True)
    analytic = [p.grad.copy() for p in params]
    max_rel = 0.0
    for p, ana in zip(params, analytic):
        it = np.nditer(p.value, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.value[idx]
            p.value[idx] = orig + h
            lp = loss_fn(cache=False)
            p.value[idx] = orig - h
            lm = loss_fn(cache=False)
            p.value[idx] = orig
            num = (lp - lm) / (2 * h)
            a = ana[idx]
            if abs(num) < 1e-9 and abs(a) < 1e-9:
                continue
            max_rel = max(max_rel, abs(num - a) / max(abs(num), abs(a)))
    return max_rel


def brute_force_macro_f1(predictions, labels, n_classes):
    """Straightforward per-class loop, kept independent of the library."""
    scores = []
    for c in range(n_classes):
        tp = fp = fn = 0
        for p, t in zip(predictions, labels):
            if p == c and t == c:
                tp += 1
            elif p == c and t != c:
                fp += 1
            elif p != c and t == c:
                fn += 1
        if tp + fp + fn == 0:
            continue  # class absent from both sides
        scores.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    return sum(scores) / len(scores)


def random_rotation(rng):
    """Uniform-ish proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_hand(rng, scale=0.05):
    """A well-conditioned random hand: distinct keypoints, spread MCPs."""
    from mmear import handpose as hp

    base = rng.standard_normal((hp.N_KEYPOINTS, 3)) * scale
    base[hp.WRIST] = 0.0
    base[hp.MIDDLE_MCP] = np.array([0.0, 0.01, 0.09]) + rng.normal(0, 0.01, 3)
    base[hp.INDEX_MCP] = np.array([0.05, 0.0, 0.08]) + rng.normal(0, 0.01, 3)
    return base
