"""Shared oracles for the test suite."""

import numpy as np

from iterseg.loss import LossConfig, make_targets, total_loss
from iterseg.network import SegmentorConfig, TinyFCN


def _activation_signature(cache):
    """ReLU on/off pattern, pooling winners and the label ReLU gate of one forward pass."""
    parts = [(v > 0).ravel() for k, v in cache.items() if k.endswith((".out", ".f"))]
    parts += [v.ravel() for k, v in cache.items() if k.endswith(".idx")]
    parts.append(np.array([cache["label.a"] > 0]))
    return np.concatenate([p.astype(np.int64) for p in parts])


def gradient_check(channels=3, depth=2, size=8, head_width=3, h=1e-4, seed=1):
    """Central-difference check of every network parameter.

    A difference quotient is only a derivative when both probes stay on the same
    linear piece, so parameters whose +h and -h runs differ in any ReLU gate or
    max-pool winner are reported as skipped rather than compared.
    Returns ``(max_rel_err, n_checked, n_skipped)``.
    """
    rng = np.random.default_rng(seed)
    net = TinyFCN(SegmentorConfig(channels=channels, depth=depth, patch_size=(size,) * 3,
                                  head_width=head_width, label_bias_init=0.5, seed=seed))
    image = rng.normal(size=(size,) * 3)
    memory = (rng.random((size,) * 3) < 0.3).astype(float)
    t = np.zeros((size,) * 3, bool)
    t[size // 4:3 * size // 4, size // 4:3 * size // 4, size // 4:] = True
    targets = make_targets(t, 5, True)
    loss_cfg = LossConfig(n_max=100)

    def evaluate():
        pred, cache = net.forward(image, memory)
        return total_loss(pred.S, pred.L, pred.C, targets, 30, loss_cfg)[0].total, cache

    _, cache = evaluate()
    pred, _ = net.forward(image, memory)
    grads = total_loss(pred.S, pred.L, pred.C, targets, 30, loss_cfg)[1]
    analytic = net.backward(cache, grads)

    worst, checked, skipped = 0.0, 0, 0
    for name, param in net.params.items():
        flat = param.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, cache_up = evaluate()
            flat[i] = old - h
            down, cache_down = evaluate()
            flat[i] = old
            if not np.array_equal(_activation_signature(cache_up),
                                  _activation_signature(cache_down)):
                skipped += 1
                continue
            num = (up - down) / (2 * h)
            an = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(num - an) / max(abs(num), abs(an), 1e-8))
            checked += 1
    return worst, checked, skipped
