"""Central-difference gradient checking for scalar-valued tape functions."""
import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f, t: Tensor, h=1e-6, idx=None):
    """Central differences of scalar ``f()`` with respect to entries of ``t``.

    Complex entries are perturbed along the real and imaginary axes and
    combined as dRe + 1j*dIm. ``idx`` restricts the check to flat indices.
    """
    v = t.value
    flat = v.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = {}
    with no_grad():
        for i in idx:
            parts = []
            for d in ((1.0, 1j) if np.iscomplexobj(v) else (1.0,)):
                old = flat[i]
                flat[i] = old + h * d
                fp = float(np.real(f().value))
                flat[i] = old - h * d
                fm = float(np.real(f().value))
                flat[i] = old
                parts.append((fp - fm) / (2 * h))
            out[i] = parts[0] + (1j * parts[1] if len(parts) > 1 else 0)
    return out


def check_grad(f, tensors, h=1e-6, max_entries=None, seed=0):
    """Max relative error between tape and finite-difference gradients.

    The error is ||g_tape - g_fd|| / max(||g_fd||, ||g_tape||, 1e-12) over
    the checked entries of every tensor.
    """
    for t in tensors:
        t.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    gen = np.random.default_rng(seed)
    for t in tensors:
        n = t.value.size
        idx = None
        if max_entries is not None and n > max_entries:
            idx = sorted(gen.choice(n, size=max_entries, replace=False).tolist())
        fd = numeric_grad(f, t, h, idx)
        keys = sorted(fd)
        g_fd = np.array([fd[k] for k in keys])
        tape = np.zeros_like(t.value) if t.grad is None else t.grad
        g_tape = np.asarray(tape).reshape(-1)[keys]
        denom = max(np.linalg.norm(g_fd), np.linalg.norm(g_tape), 1e-12)
        worst = max(worst, float(np.linalg.norm(g_tape - g_fd) / denom))
    return worst
