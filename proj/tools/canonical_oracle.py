#!/usr/bin/env python3
"""Independent reference for the canonical 4-d benchmark potential.

Builds the Hermite coefficients of the canonical potential on the 9-node
periodic mesh directly from its closed form (value, first and mixed
derivatives at each node), removes the mean, and evaluates the expansion at
random probe points by summing over every basis function. Writes
data/canonical_d4_n9.fpf (+ .bin) and data/canonical_d4_n9_probes.json.
"""

import itertools
import json
import math
import pathlib

import numpy as np

DIMS, NODES, LO, HI = 4, 9, -1.0, 1.0
# (amplitude, wave numbers, sine flags)
TERMS = [
    (0.6, (1, 0, 0, 0), (0, 0, 0, 0)),
    (0.4, (0, 1, 0, 0), (0, 1, 0, 0)),
    (0.5, (1, 0, 1, 0), (0, 0, 1, 0)),
    (0.5, (0, 1, 0, 1), (0, 1, 0, 0)),
    (0.3, (0, 0, 1, 0), (0, 0, 0, 0)),
    (0.2, (0, 0, 0, 2), (0, 0, 0, 1)),
]


def factor(x, k, sine, deriv):
    if k == 0:
        return 1.0 if deriv == 0 else 0.0
    w = k * math.pi
    if sine:
        return math.sin(w * x) if deriv == 0 else w * math.cos(w * x)
    return math.cos(w * x) if deriv == 0 else -w * math.sin(w * x)


def closed_form(x, derivs):
    return sum(a * math.prod(factor(x[i], k[i], s[i], derivs[i]) for i in range(DIMS)) for a, k, s in TERMS)


def shape(t, h):
    """Cubic Hermite pieces on [0, 1]: left value, left slope, right value, right slope."""
    return (2 * t**3 - 3 * t**2 + 1, (t**3 - 2 * t**2 + t) * h, -2 * t**3 + 3 * t**2, (t**3 - t**2) * h)


def shape_dx(t, h):
    return ((6 * t**2 - 6 * t) / h, 3 * t**2 - 4 * t + 1, (-6 * t**2 + 6 * t) / h, 3 * t**2 - 2 * t)


def basis_1d(x, node, kind, h, m, dx=False):
    """Global periodic basis function (node, kind) on m segments, evaluated at x."""
    u = (x - LO) / h
    seg = min(int(math.floor(u)), m - 1)
    t = u - seg
    f = shape_dx(t, h) if dx else shape(t, h)
    if seg == node:
        return f[kind]
    if (seg + 1) % m == node:
        return f[2 + kind]
    return 0.0


def main():
    root = pathlib.Path(__file__).resolve().parent.parent / "data"
    m = NODES - 1
    h = (HI - LO) / m
    nodes = [LO + j * h for j in range(m)]
    theta = np.zeros((2 * m,) * DIMS)
    for idx in itertools.product(range(m), repeat=DIMS):
        x = [nodes[j] for j in idx]
        for kinds in itertools.product(range(2), repeat=DIMS):
            theta[tuple(2 * j + k for j, k in zip(idx, kinds))] = closed_form(x, kinds)
    # Mean of the expansion: slope functions integrate to zero, value functions to h.
    value_slots = tuple(slice(0, 2 * m, 2) for _ in range(DIMS))
    theta[value_slots] -= theta[value_slots].mean()

    flat = theta.reshape(-1)
    payload = root / "canonical_d4_n9.bin"
    flat.astype("<f8").tofile(payload)
    manifest = {
        "format": "fpf",
        "version": 1,
        "grid": {"dims": DIMS, "bounds": [[LO, HI]] * DIMS, "nodes_per_dim": [NODES] * DIMS, "periodic": True},
        "beta": 1.0,
        "theta_shape": [2 * m] * DIMS,
        "dof_order": "per node value then derivative; row-major, last dimension fastest",
        "dtype": "f64le",
        "payload": payload.name,
    }
    (root / "canonical_d4_n9.fpf").write_text(json.dumps(manifest, indent=2) + "\n")

    rng = np.random.default_rng(20240611)
    probes = []
    for x in rng.uniform(LO, HI, size=(12, DIMS)).tolist():
        table = [[[basis_1d(x[i], j, k, h, m, dx) for j in range(m) for k in range(2)] for dx in (False, True)]
                 for i in range(DIMS)]
        value = 0.0
        grad = [0.0] * DIMS
        for multi in itertools.product(range(2 * m), repeat=DIMS):
            c = theta[multi]
            if c == 0.0:
                continue
            vals = [table[i][0][multi[i]] for i in range(DIMS)]
            if not any(vals) and not any(table[i][1][multi[i]] for i in range(DIMS)):
                continue
            value += c * math.prod(vals)
            for i in range(DIMS):
                grad[i] += c * table[i][1][multi[i]] * math.prod(vals[:i] + vals[i + 1:])
        probes.append({"x": x, "value": value, "gradient": grad, "closed_form": closed_form(x, (0,) * DIMS)})
    mean_shift = closed_form([LO] * DIMS, (0,) * DIMS) - theta[(0,) * DIMS]
    out = {"grid_nodes": NODES, "mean_removed": mean_shift, "probes": probes}
    (root / "canonical_d4_n9_probes.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
