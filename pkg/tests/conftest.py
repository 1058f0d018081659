import numpy as np

from reflsm.pgmio import INTENSITY_FLOOR
from reflsm.synth import PhantomSpec, generate


def intensity_to_log(values):
    return np.log(INTENSITY_FLOOR + (1.0 - INTENSITY_FLOOR) * values)


def phantom_log_image(spec: PhantomSpec):
    """Generate a phantom and return (log image, truth mask)."""
    sample = generate(spec)
    return intensity_to_log(sample.image), sample.truth_mask


def double_sum_inner(a, b) -> float:
    """Explicit scalar accumulation, independent of vectorized reductions."""
    total = 0.0
    rows, cols = a.shape
    for i in range(rows):
        for j in range(cols):
            total += float(a[i, j]) * float(b[i, j])
    return total
