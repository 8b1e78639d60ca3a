"""Shared generators for randomized test instances."""

import numpy as np
import pytest

from optonoise import Activation, CovSpec, Layer, Network, NoiseProfile


def random_linear_net(rng, depth=None, max_dim=6, weight_scale=0.8):
    """A random diagonal-linear network with moderate transport norms."""
    if depth is None:
        depth = int(rng.integers(1, 5))
    dims = [int(rng.integers(1, max_dim + 1)) for _ in range(depth + 1)]
    layers = []
    for l in range(depth):
        W = rng.normal(size=(dims[l + 1], dims[l])) * weight_scale / np.sqrt(dims[l])
        e = rng.uniform(0.3, 1.1, size=dims[l + 1])
        b = rng.normal(size=dims[l + 1]) * 0.3
        layers.append(Layer(W, b, Activation.diag_linear(e)))
    return Network(tuple(layers), dims[0])


def random_covspec(rng, dim, scale=0.05, allow_zero=True):
    kinds = ["isotropic", "diagonal", "full"] + (["zero"] if allow_zero else [])
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "zero":
        return CovSpec.zero()
    if kind == "isotropic":
        return CovSpec.isotropic(float(rng.uniform(0.2, 1.0)) * scale)
    if kind == "diagonal":
        return CovSpec.diagonal(rng.uniform(0.1, 1.0, size=dim) * scale)
    A = rng.normal(size=(dim, dim))
    return CovSpec.full(A @ A.T / dim * scale)


def random_profile(rng, net, scale=0.05):
    """Random noise profile; modulation is always nonzero so covariances
    never degenerate to all-zero."""
    dims = net.dims()
    return NoiseProfile(
        random_covspec(rng, dims[0], scale, allow_zero=False),
        tuple(random_covspec(rng, d, scale) for d in dims[1:]),
        tuple(random_covspec(rng, d, scale) for d in dims[1:]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
