"""Additive Gaussian noise model and Monte Carlo harness.

A noisy evaluation perturbs the network at three points: once on the
input when it is modulated, inside every layer's weighted addition, and
after every activation.  Each perturbation is an independent zero-mean
multivariate normal draw whose covariance comes from a
:class:`NoiseProfile`.  ``combine``/``split`` covariances ride along in
the profile for the combine/split design evaluator; the plain noisy
forward pass ignores them.

Randomness is organized as counter-style splittable streams: every draw
site is keyed by ``(seed, path)`` where ``path`` is a tuple of integers
``(trial, kind, layer, copy)``.  Distinct paths give statistically
independent streams and the same ``(seed, path)`` reproduces the same
samples bit-exactly, regardless of evaluation order or parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .network import Network, affine

__all__ = [
    "CovSpec",
    "NoiseProfile",
    "RngStream",
    "SampleStats",
    "GENERATOR_NAME",
    "sample_noise",
    "noisy_forward",
    "noisy_forward_samples",
    "monte_carlo",
    "stats_from_samples",
    "covspec_to_json",
    "covspec_from_json",
    "profile_to_json",
    "profile_from_json",
]

# Draw-site kind codes used as the second path component.
KIND_MODULATION = 0
KIND_WEIGHT = 1
KIND_ACTIVATION = 2
KIND_COMBINE = 3
KIND_SPLIT = 4

#: Recorded in output metadata so result files name their generator.
GENERATOR_NAME = "philox4x64/seedseq-path"

_SYM_TOL = 1e-12
_PSD_PIVOT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CovSpec:
    """Covariance specification for one noise source.

    One of: ``zero``, ``isotropic`` (``var * I``), ``diagonal`` (variance
    vector), or ``full`` (explicit symmetric PSD matrix).  Validation
    happens here, at construction, so sampling never fails: diagonal
    entries must be nonnegative, full matrices symmetric to 1e-12 with
    smallest eigenvalue above -1e-10 (the PSD pivot tolerance).
    """

    kind: str
    var: float = 0.0
    vec: np.ndarray | None = None
    mat: np.ndarray | None = None
    _factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "zero":
            return
        if self.kind == "isotropic":
            if not (self.var >= 0.0) or not math.isfinite(self.var):
                raise ValidationError("isotropic variance must be finite and >= 0")
            return
        if self.kind == "diagonal":
            v = np.asarray(self.vec, dtype=np.float64)
            if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0.0):
                raise ValidationError(
                    "diagonal covariance needs a finite nonnegative variance vector"
                )
            object.__setattr__(self, "vec", v)
            return
        if self.kind == "full":
            m = np.asarray(self.mat, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValidationError("full covariance must be a square matrix")
            if not np.all(np.isfinite(m)):
                raise ValidationError("full covariance must be finite")
            if np.max(np.abs(m - m.T), initial=0.0) > _SYM_TOL:
                raise ValidationError("full covariance is not symmetric (tol 1e-12)")
            m = (m + m.T) / 2.0
            eigval, eigvec = np.linalg.eigh(m)
            if eigval.size and eigval[0] < -_PSD_PIVOT_TOL:
                raise ValidationError(
                    f"full covariance is not PSD (min eigenvalue {eigval[0]:.3e})"
                )
            # factor F with F F^T = m, used for sampling; eigen-based so
            # semidefinite matrices are accepted
            factor = eigvec * np.sqrt(np.clip(eigval, 0.0, None))
            object.__setattr__(self, "mat", m)
            object.__setattr__(self, "_factor", factor)
            return
        raise ValidationError(f"unknown covariance kind {self.kind!r}")

    @classmethod
    def zero(cls) -> "CovSpec":
        return cls("zero")

    @classmethod
    def isotropic(cls, var: float) -> "CovSpec":
        return cls("isotropic", var=float(var))

    @classmethod
    def diagonal(cls, vec) -> "CovSpec":
        return cls("diagonal", vec=np.asarray(vec, dtype=np.float64))

    @classmethod
    def full(cls, mat) -> "CovSpec":
        return cls("full", mat=np.asarray(mat, dtype=np.float64))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "isotropic" and self.var == 0.0)

    @property
    def dimension(self) -> int | None:
        """Fixed dimension, or None when the spec scales to any dimension."""
        if self.kind == "diagonal":
            return self.vec.shape[0]
        if self.kind == "full":
            return self.mat.shape[0]
        return None

    def check_dim(self, dim: int, what: str = "covariance") -> None:
        fixed = self.dimension
        if fixed is not None and fixed != dim:
            raise ValidationError(f"{what} has dimension {fixed}, expected {dim}")

    def matrix(self, dim: int) -> np.ndarray:
        """Materialize as a dim x dim matrix."""
        self.check_dim(dim)
        if self.kind == "zero":
            return np.zeros((dim, dim))
        if self.kind == "isotropic":
            return self.var * np.eye(dim)
        if self.kind == "diagonal":
            return np.diag(self.vec)
        return self.mat.copy()

    def max_diagonal(self, dim: int) -> float:
        """Largest diagonal entry; used for the common variance bound."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "isotropic":
            return self.var
        if self.kind == "diagonal":
            return float(np.max(self.vec)) if self.vec.size else 0.0
        return float(np.max(np.diag(self.mat)))


def _draw(spec: CovSpec, dim: int, gen: np.random.Generator, n: int | None):
    """One draw (n=None) or an ``(n, dim)`` block from Normal(0, spec)."""
    shape = (dim,) if n is None else (n, dim)
    if spec.kind == "zero":
        return np.zeros(shape)
    spec.check_dim(dim)
    z = gen.standard_normal(shape)
    if spec.kind == "isotropic":
        return math.sqrt(spec.var) * z
    if spec.kind == "diagonal":
        return np.sqrt(spec.vec) * z
    return z @ spec._factor.T


@dataclass(frozen=True)
class RngStream:
    """Splittable random stream keyed by ``(seed, path)``.

    ``child(*ix)`` appends integers to the path; ``generator()`` builds a
    Philox-4x64 bit generator from ``SeedSequence(seed, spawn_key=path)``.
    Philox is counter-based, so streams with distinct paths are
    independent and each stream is reproducible in isolation.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        # two's-complement view so negative 64-bit seeds stay usable
        entropy = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        seq = np.random.SeedSequence(entropy=entropy, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def normal(self, shape) -> np.ndarray:
        return self.generator().standard_normal(shape)


def sample_noise(spec: CovSpec, dim: int, rng: RngStream) -> np.ndarray:
    """Draw one vector from Normal(0, spec) on the given stream.

    A zero spec returns the zero vector without touching the stream, so
    zero-noise configurations stay bit-exact.
    """
    if spec.is_zero:
        spec.check_dim(dim)
        return np.zeros(dim)
    return _draw(spec, dim, rng.generator(), None)


@dataclass(frozen=True, eq=False)
class NoiseProfile:
    """Covariances for every noise source of a depth-L network.

    ``weight[l]`` and ``activation[l]`` describe layer ``l+1`` (dimension
    ``d_{l+1}``); ``modulation`` acts on the input.  ``combine`` and
    ``split`` are consumed only by the combine/split design evaluator.
    """

    modulation: CovSpec
    weight: tuple[CovSpec, ...]
    activation: tuple[CovSpec, ...]
    combine: CovSpec = field(default_factory=CovSpec.zero)
    split: CovSpec = field(default_factory=CovSpec.zero)

    def __post_init__(self):
        object.__setattr__(self, "weight", tuple(self.weight))
        object.__setattr__(self, "activation", tuple(self.activation))

    @property
    def depth(self) -> int:
        return len(self.weight)

    @classmethod
    def zero(cls, depth: int) -> "NoiseProfile":
        z = CovSpec.zero
        return cls(z(), tuple(z() for _ in range(depth)), tuple(z() for _ in range(depth)))

    @classmethod
    def isotropic(
        cls,
        depth: int,
        modulation_var: float = 0.0,
        weight_var: float = 0.0,
        activation_var: float = 0.0,
        combine_var: float = 0.0,
        split_var: float = 0.0,
    ) -> "NoiseProfile":
        def spec(v):
            return CovSpec.isotropic(v) if v else CovSpec.zero()

        return cls(
            spec(modulation_var),
            tuple(spec(weight_var) for _ in range(depth)),
            tuple(spec(activation_var) for _ in range(depth)),
            spec(combine_var),
            spec(split_var),
        )

    def validate_for(self, net: Network) -> None:
        if self.depth != net.depth or len(self.activation) != net.depth:
            raise ValidationError(
                f"profile depth {self.depth}/{len(self.activation)} does not "
                f"match network depth {net.depth}"
            )
        dims = net.dims()
        self.modulation.check_dim(dims[0], "modulation covariance")
        for l in range(net.depth):
            self.weight[l].check_dim(dims[l + 1], f"weight covariance of layer {l + 1}")
            self.activation[l].check_dim(
                dims[l + 1], f"activation covariance of layer {l + 1}"
            )
            self.combine.check_dim(dims[l + 1], "combine covariance")
            self.split.check_dim(dims[l + 1], "split covariance")


def noisy_forward(net: Network, profile: NoiseProfile, x, rng: RngStream) -> np.ndarray:
    """One noisy evaluation of the unmodified network.

    Modulation noise is added once to the input; each layer then adds
    weight noise inside the activation and activation noise after it.
    With an all-zero profile this equals :func:`forward` bit-exactly.
    """
    net.require_valid()
    profile.validate_for(net)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValidationError(f"input must be a vector of length {net.input_dim}", layer=0)

    h = x
    if not profile.modulation.is_zero:
        h = h + sample_noise(profile.modulation, net.input_dim, rng.child(KIND_MODULATION, 0, 0))
    for l, layer in enumerate(net.layers, start=1):
        u = affine(layer.weights, layer.bias, h)
        w_spec = profile.weight[l - 1]
        if not w_spec.is_zero:
            u = u + sample_noise(w_spec, layer.out_dim, rng.child(KIND_WEIGHT, l, 0))
        h = layer.activation(u)
        a_spec = profile.activation[l - 1]
        if not a_spec.is_zero:
            h = h + sample_noise(a_spec, layer.out_dim, rng.child(KIND_ACTIVATION, l, 0))
    return h


def noisy_forward_samples(
    net: Network, profile: NoiseProfile, x, trials: int, rng: RngStream
) -> np.ndarray:
    """``trials`` independent noisy evaluations, vectorized over the trial axis.

    Draw sites are keyed exactly like :func:`noisy_forward` but each site
    emits a ``(trials, d)`` block with trials as rows, so a batch is
    reproducible as a whole without looping single evaluations.

    Returns an array of shape ``(trials, d_L)``.
    """
    net.require_valid()
    profile.validate_for(net)
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValidationError(f"input must be a vector of length {net.input_dim}", layer=0)

    h = np.broadcast_to(x, (trials, net.input_dim))
    if not profile.modulation.is_zero:
        gen = rng.child(KIND_MODULATION, 0, 0).generator()
        h = h + _draw(profile.modulation, net.input_dim, gen, trials)
    for l, layer in enumerate(net.layers, start=1):
        u = affine(layer.weights, layer.bias, h)
        w_spec = profile.weight[l - 1]
        if not w_spec.is_zero:
            gen = rng.child(KIND_WEIGHT, l, 0).generator()
            u = u + _draw(w_spec, layer.out_dim, gen, trials)
        h = layer.activation(u)
        a_spec = profile.activation[l - 1]
        if not a_spec.is_zero:
            gen = rng.child(KIND_ACTIVATION, l, 0).generator()
            h = h + _draw(a_spec, layer.out_dim, gen, trials)
    return np.array(h, dtype=np.float64, copy=True)


@dataclass(frozen=True, eq=False)
class SampleStats:
    """Summary of a Monte Carlo run.

    ``covariance`` is the unbiased (n-1 divisor) sample covariance;
    ``mse_vs_reference`` is the mean squared 2-norm of the deviation from
    the reference vector.
    """

    n: int
    mean: np.ndarray
    covariance: np.ndarray
    mse_vs_reference: float


def stats_from_samples(samples: np.ndarray, reference) -> SampleStats:
    """Two-pass statistics of an ``(n, d)`` sample matrix.

    The mean is taken first; the covariance is assembled from centered
    outer products (numpy's pairwise/blocked summation keeps accumulation
    error around 1e-10 relative at a million samples).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValidationError("need an (n, d) sample matrix with n >= 2")
    n = samples.shape[0]
    reference = np.asarray(reference, dtype=np.float64)
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    dev = samples - reference
    mse = float(np.mean(np.einsum("ij,ij->i", dev, dev)))
    return SampleStats(n=n, mean=mean, covariance=cov, mse_vs_reference=mse)


def monte_carlo(evaluator, x, reference, trials: int, seed: int) -> SampleStats:
    """Run ``trials`` independent evaluations of ``evaluator(x, rng)``.

    Each trial owns the stream ``RngStream(seed).child(trial)``, so the
    result does not depend on execution order.  The reduction is performed
    in trial order.
    """
    if trials < 2:
        raise ValidationError("monte_carlo needs trials >= 2")
    root = RngStream(int(seed))
    x = np.asarray(x, dtype=np.float64)
    rows = [np.asarray(evaluator(x, root.child(t)), dtype=np.float64) for t in range(trials)]
    return stats_from_samples(np.vstack(rows), reference)


# ---------------------------------------------------------------------------
# JSON wire format
#
# covspec: "zero" | {"isotropic": v} | {"diagonal": [...]} | {"full": [[...]]}
# profile: {"modulation": covspec, "weight": [covspec, ...],
#           "activation": [covspec, ...], "combine": covspec, "split": covspec}
# ---------------------------------------------------------------------------


def covspec_to_json(spec: CovSpec):
    if spec.kind == "zero":
        return "zero"
    if spec.kind == "isotropic":
        return {"isotropic": spec.var}
    if spec.kind == "diagonal":
        return {"diagonal": spec.vec.tolist()}
    return {"full": spec.mat.tolist()}


def covspec_from_json(obj) -> CovSpec:
    if obj == "zero":
        return CovSpec.zero()
    if isinstance(obj, dict) and len(obj) == 1:
        key, value = next(iter(obj.items()))
        if key == "isotropic":
            return CovSpec.isotropic(value)
        if key == "diagonal":
            return CovSpec.diagonal(value)
        if key == "full":
            return CovSpec.full(value)
    raise ValidationError(f"malformed covariance spec: {obj!r}")


def profile_to_json(profile: NoiseProfile) -> dict:
    return {
        "modulation": covspec_to_json(profile.modulation),
        "weight": [covspec_to_json(s) for s in profile.weight],
        "activation": [covspec_to_json(s) for s in profile.activation],
        "combine": covspec_to_json(profile.combine),
        "split": covspec_to_json(profile.split),
    }


def profile_from_json(obj: dict) -> NoiseProfile:
    if not isinstance(obj, dict):
        raise ValidationError("noise profile JSON must be an object")
    try:
        modulation = covspec_from_json(obj.get("modulation", "zero"))
        weight = tuple(covspec_from_json(s) for s in obj["weight"])
        activation = tuple(covspec_from_json(s) for s in obj["activation"])
    except KeyError as exc:
        raise ValidationError(f"noise profile JSON is missing {exc}")
    combine = covspec_from_json(obj.get("combine", "zero"))
    split = covspec_from_json(obj.get("split", "zero"))
    if len(weight) != len(activation):
        raise ValidationError("weight and activation lists must have equal length")
    return NoiseProfile(modulation, weight, activation, combine, split)
