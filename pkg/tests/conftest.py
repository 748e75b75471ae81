"""Shared test utilities: finite-difference oracle and random graphs."""

import numpy as np

from bscnets.complex_core import Graph


def central_difference(f, params, h=1e-5):
    """Gradient of scalar f(list of arrays) by central differences.

    Returns one array per parameter, same shapes.  f must not mutate its
    inputs.
    """
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(params)
            flat[i] = orig - h
            lo = f(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(a, b):
    """Max-norm relative disagreement between two gradient arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < p
    iu = np.triu_indices(n, k=1)
    pairs = np.stack(iu, axis=1)[mask[iu]]
    return Graph.from_edges(n, pairs)
