"""Shared test oracles: finite-difference gradients and comparison helpers."""

import zlib

import numpy as np

from vesrnet.tensor import Tape, Tensor


def numeric_grad(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array.

    Perturbs every element independently; arrays must be float64 for the
    step size to be meaningful. Returns one gradient array per input.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def check_grads(build, arrays, tol=1e-4, h=1e-5):
    """Assert tape gradients of `build` match central differences.

    `build(*tensors) -> scalar Tensor`; `arrays` are float64 ndarrays used
    both for the recorded pass and, element-perturbed, for the numeric one.
    """
    tensors = [Tensor(a, dtype=np.float64) for a in arrays]
    with Tape() as tape:
        loss = build(*tensors)
        tape.backward(loss)
    got = [tape.grad(t) for t in tensors]

    def f(*arrs):
        return build(*[Tensor(a, dtype=np.float64) for a in arrs]).item()

    want = numeric_grad(f, [a.copy() for a in arrays], h=h)
    for i, (g, w) in enumerate(zip(got, want)):
        scale = 1.0 + np.abs(w).max()
        err = np.abs(g - w).max() / scale
        assert err <= tol, f"input {i}: max grad error {err:.3e} exceeds {tol:.1e}"
    return got


def rng_for(name: str) -> np.random.Generator:
    """Deterministic per-test generator so failures reproduce exactly."""
    return np.random.default_rng(zlib.crc32(name.encode()))
