"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

H = 1e-5


def rel_error(analytic, numeric):
    a, n = float(analytic), float(numeric)
    scale = max(abs(a), abs(n))
    if scale < 1e-8:  # below finite-difference roundoff for O(10) losses
        return 0.0
    return abs(a - n) / scale


def numeric_grad(f, arr, index, h=H):
    """d f / d arr[index] by central differences; ``arr`` is perturbed in place and restored."""
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * h)


def check_array(f, arr, grad, n_samples=None, rng=None, stable=None):
    """Max relative error over (a sample of) the entries of ``arr``.

    ``stable()`` returns a hashable signature of the kink pattern (ReLU masks,
    max-pool winners, loss signs); entries whose +/-h perturbation changes it
    are skipped and counted. Returns ``(max_rel_err, n_checked, n_skipped)``.
    """
    idx_all = list(np.ndindex(arr.shape))
    if n_samples is not None and n_samples < len(idx_all):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(idx_all), size=n_samples, replace=False)
        idx_all = [idx_all[i] for i in pick]
    worst, checked, skipped = 0.0, 0, 0
    base_sig = stable() if stable else None
    for index in idx_all:
        if stable is not None:
            old = arr[index]
            arr[index] = old + H
            sp = stable()
            arr[index] = old - H
            sm = stable()
            arr[index] = old
            if sp != base_sig or sm != base_sig:
                skipped += 1
                continue
        worst = max(worst, rel_error(grad[index], numeric_grad(f, arr, index)))
        checked += 1
    return worst, checked, skipped
