"""PCA model reduction with a latent-space network, and its linear variant.

The operator is decode_out . net . encode_in: fields are reduced to a few
principal-component coefficients, a dense network (or a single linear layer)
maps input coefficients to output coefficients, and the output basis
reconstructs the field.  The basis comes from a randomised range finder
followed by an exact SVD of the projected matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datagen import SampleSet
from .fields import GridField, ResolutionError
from .nets import DenseNet, OptimConfig, train_dense

PCANN_HIDDEN_WIDTHS = (500, 1000, 2000, 1000, 500)
_OVERSAMPLING = 10
_POWER_ITERATIONS = 2
_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class PcaBasis:
    """Truncated orthonormal basis of flattened s x s fields."""

    s: int
    components: np.ndarray  # (d, s*s), rows orthonormal
    singular_values: np.ndarray  # (d,), non-increasing
    mean: np.ndarray  # (s*s,)

    def __post_init__(self):
        gram = self.components @ self.components.T
        if np.max(np.abs(gram - np.eye(self.d))) > _ORTHO_TOL:
            raise ValueError("basis components are not orthonormal")
        if np.any(np.diff(self.singular_values) > 1e-12):
            raise ValueError("singular values must be non-increasing")

    @property
    def d(self) -> int:
        return self.components.shape[0]


def fit_pca(fields, d: int, seed) -> PcaBasis:
    """Top-d principal components of mean-centred fields.

    Randomised range finder (oversampling 10, two power iterations with QR
    re-orthonormalisation) followed by an exact SVD of the projected matrix.
    """
    if isinstance(fields, np.ndarray):
        data = fields.reshape(fields.shape[0], -1)
        s = fields.shape[1]
    else:
        s = fields[0].s
        data = np.stack([f.values.ravel() for f in fields])
    n, dim = data.shape
    if n < 2:
        raise ValueError("need at least two fields to fit a basis")
    if d > min(n, dim):
        raise ValueError(f"latent dimension {d} exceeds min(count, nodes) = {min(n, dim)}")

    mean = data.mean(axis=0)
    a = (data - mean).T  # (dim, n): columns are centred samples
    rng = np.random.default_rng(seed)
    sketch = min(d + _OVERSAMPLING, min(n, dim))
    y = a @ rng.standard_normal((n, sketch))
    q, _ = np.linalg.qr(y)
    for _ in range(_POWER_ITERATIONS):
        q, _ = np.linalg.qr(a @ (a.T @ q))
    b = q.T @ a  # (sketch, n)
    u_small, sv, _ = np.linalg.svd(b, full_matrices=False)
    components = (q @ u_small)[:, :d].T
    return PcaBasis(s=s, components=components, singular_values=sv[:d].copy(), mean=mean.copy())


def _check_resolution(basis: PcaBasis, s: int) -> None:
    if s != basis.s:
        raise ResolutionError(f"field resolution {s} does not match basis resolution {basis.s}")


def encode(basis: PcaBasis, field: GridField) -> np.ndarray:
    """Latent coefficients: inner products with the components after centring."""
    _check_resolution(basis, field.s)
    return basis.components @ (field.values.ravel() - basis.mean)


def decode(basis: PcaBasis, coeffs: np.ndarray) -> GridField:
    """Mean plus linear combination of the components."""
    flat = basis.mean + np.asarray(coeffs) @ basis.components
    return GridField(flat.reshape(basis.s, basis.s))


def encode_batch(basis: PcaBasis, fields: np.ndarray) -> np.ndarray:
    _check_resolution(basis, fields.shape[1])
    return (fields.reshape(fields.shape[0], -1) - basis.mean) @ basis.components.T


def decode_batch(basis: PcaBasis, coeffs: np.ndarray) -> np.ndarray:
    flat = basis.mean + coeffs @ basis.components
    return flat.reshape(coeffs.shape[0], basis.s, basis.s)


@dataclass
class PcannModel:
    """Latent-space operator; the net acts on whitened input coordinates.

    ``in_scale`` holds the per-component standard deviations dividing the
    input latents (``out_scale`` multiplies the net output and is ones for
    trained models).  Input whitening is a pure preconditioner: it
    reparameterises the first layer without changing the model class or the
    least-squares optimum of the linear variant.
    """

    input_basis: PcaBasis
    output_basis: PcaBasis
    net: DenseNet
    kind: str  # "pcann" | "pcalin"
    in_scale: np.ndarray | None = None
    out_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.net.in_width != self.input_basis.d or self.net.out_width != self.output_basis.d:
            raise ValueError("network widths do not match the basis dimensions")
        if self.in_scale is None:
            self.in_scale = np.ones(self.input_basis.d)
        if self.out_scale is None:
            self.out_scale = np.ones(self.output_basis.d)

    @property
    def param_count(self) -> int:
        return self.net.param_count


def build_net(kind: str, d_x: int, d_y: int) -> DenseNet:
    if kind == "pcalin":
        return DenseNet([(d_x, d_y, "identity")])
    if kind == "pcann":
        return DenseNet.from_widths([d_x, *PCANN_HIDDEN_WIDTHS, d_y], hidden="selu")
    raise ValueError(f"unknown operator kind {kind!r}")


def _training_pairs(train) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(train, SampleSet):
        return train.lambdas, train.solutions
    inputs, outputs = train
    return np.asarray(inputs), np.asarray(outputs)


def train_operator(kind: str, train, d_x: int, d_y: int, optim: OptimConfig) -> PcannModel:
    """Fit bases and train the latent map.

    ``train`` is a SampleSet (pairs taken as lambda -> u) or an explicit
    (inputs, outputs) pair of (n, s, s) arrays; for backward operator
    training the caller passes the pair with roles swapped.  The nonlinear
    variant uses the relative latent loss with SGD, the linear variant a
    mean-squared latent loss with Adam, regardless of ``optim.algorithm``.
    """
    kind = kind.lower()
    inputs, outputs = _training_pairs(train)
    if inputs.shape[0] == 0:
        raise ValueError("training set is empty")
    seed_seq = np.random.SeedSequence(entropy=optim.seed, spawn_key=(100,))
    pca_in_seed, pca_out_seed, init_seed = seed_seq.spawn(3)
    input_basis = fit_pca(inputs, d_x, pca_in_seed)
    output_basis = fit_pca(outputs, d_y, pca_out_seed)
    net = build_net(kind, d_x, d_y)
    if kind == "pcalin":
        net.initialize("xavier", init_seed)
        cfg = replace(optim, algorithm="adam")
        loss = "mse"
    else:
        # per-sample relative L2 on the latent vectors: the norm-ratio loss,
        # stable for targets with near-zero individual components
        net.initialize("kaiming_normal", init_seed)
        cfg = replace(optim, algorithm="sgd")
        loss = "rel_l2"
    n = inputs.shape[0]
    in_scale = _latent_scale(input_basis, n)
    latent_in = encode_batch(input_basis, inputs) / in_scale
    latent_out = encode_batch(output_basis, outputs)
    if kind == "pcann":
        # one global scalar keeps the norm-ratio loss literally unchanged
        # while bringing the target magnitudes into the net's reach
        out_scale = np.full(d_y, max(float(np.sqrt(np.mean(latent_out**2))), 1e-12))
    else:
        out_scale = np.ones(d_y)
    train_dense(net, latent_in, latent_out / out_scale, loss, cfg)
    return PcannModel(
        input_basis=input_basis, output_basis=output_basis, net=net, kind=kind,
        in_scale=in_scale, out_scale=out_scale,
    )


def _latent_scale(basis: PcaBasis, n: int) -> np.ndarray:
    """Per-component standard deviation of the training latents."""
    return np.maximum(basis.singular_values / np.sqrt(max(n - 1, 1)), 1e-12)


def predict(model: PcannModel, field: GridField) -> GridField:
    """decode(net(encode(field))); dropout inactive."""
    c = encode(model.input_basis, field) / model.in_scale
    out = model.net(c[None, :]).data[0] * model.out_scale
    return decode(model.output_basis, out)


def predict_batch(model: PcannModel, fields: np.ndarray) -> np.ndarray:
    latent = encode_batch(model.input_basis, fields) / model.in_scale
    out = model.net(latent).data * model.out_scale
    return decode_batch(model.output_basis, out)
