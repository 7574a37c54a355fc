"""Central finite differences, used as the independent oracle for the tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .numcore import Tape, Tensor, backward


def numeric_grads(f: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                  step: float = 1e-5) -> list[np.ndarray]:
    """d f / d input by central differences; ``f`` sees untracked tensors only."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    out = []
    for i, x in enumerate(base):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            hi = f([Tensor(a) for a in base]).item()
            flat[j] = keep - step
            lo = f([Tensor(a) for a in base]).item()
            flat[j] = keep
            gflat[j] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def tape_grads(f: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    tape = Tape()
    leaves = [tape.watch(Tensor(np.array(x, dtype=np.float64))) for x in inputs]
    grads = backward(f(leaves))
    return [grads[l].data if l in grads else np.zeros(l.shape) for l in leaves]


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error, ||a-b|| / max(||a||, ||b||); 0 when both vanish."""
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check(f, inputs, step: float = 1e-5) -> float:
    """Relative error between tape gradients and central differences."""
    return rel_error(tape_grads(f, inputs), numeric_grads(f, inputs, step))
