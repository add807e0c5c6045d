"""Fourier neural operator: lifting, spectral layers, projection, training.

Each spectral layer transforms the (n, s, s, w) feature stack per channel,
keeps the low-frequency corner blocks [0,k1) x [0,k2) and the conjugate
partner rows [s-k1, s) x [0,k2) of the half spectrum, mixes channels with
complex weights per retained mode, and inverse-transforms.  The transform
pair is the unnormalised forward / (1/s^2)-inverse convention, under which
trained weights act on resolution-independent coefficients, so a model can
be evaluated on grids it was never trained on.

Only the retained modes are ever computed: analysis and synthesis are small
dense matrix contractions equivalent to (but much cheaper than) a full FFT
truncation at these mode counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datagen import SampleSet
from .fields import GridField, ResolutionError
from .nets import DenseNet, OptimConfig, make_optimizer, minibatches, optimizer_step, rel_l2_loss

LAYOUT_VERSION = 1


def _mode_matrices(s: int, k1: int, k2: int):
    """Analysis/synthesis matrices for the retained-mode DFT blocks at size s."""
    if k1 > s // 2 or k2 > s // 2:
        raise ResolutionError(f"retained modes ({k1}, {k2}) exceed floor(s/2) = {s // 2} at resolution {s}")
    p = np.arange(s)
    a1 = np.arange(k1)
    a2 = np.arange(s - k1, s)
    b = np.arange(k2)
    tau = -2j * math.pi / s
    ey1 = np.exp(tau * np.outer(a1, p))  # (k1, s)
    ey2 = np.exp(tau * np.outer(a2, p))
    ex = np.exp(tau * np.outer(p, b))  # (s, k2)
    sy1 = np.exp(-tau * np.outer(p, a1)) / s  # (s, k1)
    sy2 = np.exp(-tau * np.outer(p, a2)) / s
    weights = np.full(k2, 2.0)
    weights[0] = 1.0  # bin 0 of the halved axis has no conjugate partner
    cx = (weights[:, None] / s) * np.exp(-tau * np.outer(b, p))  # (k2, s)
    col_scale = weights / s**2  # adjoint scaling of the stored half-spectrum bins
    return ey1, ey2, ex, sy1, sy2, cx, col_scale


_MATRIX_CACHE: dict[tuple[int, int, int], tuple] = {}


def _mats(s: int, k1: int, k2: int):
    key = (s, k1, k2)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE[key] = _mode_matrices(s, k1, k2)
    return _MATRIX_CACHE[key]


def _analyze(v: np.ndarray, ey1, ey2, ex):
    """Retained corner blocks of the per-channel 2-d DFT of v (n, s, s, w)."""
    t = np.tensordot(v, ex, axes=([2], [0]))  # (n, s, w, k2)
    b1 = np.tensordot(ey1, t, axes=([1], [1])).transpose(1, 0, 3, 2)  # (n, k1, k2, w)
    b2 = np.tensordot(ey2, t, axes=([1], [1])).transpose(1, 0, 3, 2)
    return b1, b2


def _synthesize(o1: np.ndarray, o2: np.ndarray, sy1, sy2, cx) -> np.ndarray:
    """Real inverse transform of the two stored blocks (matches irfft2)."""
    z = np.tensordot(sy1, o1, axes=([1], [1])) + np.tensordot(sy2, o2, axes=([1], [1]))
    z = z.transpose(1, 0, 2, 3)  # (n, s, k2, w)
    out = np.tensordot(z, cx, axes=([2], [0])).real  # (n, s, w, s)
    return np.ascontiguousarray(out.transpose(0, 1, 3, 2))


def spectral_apply(v: np.ndarray, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Pure forward spectral convolution on a feature stack (n, s, s, w)."""
    s = v.shape[1]
    k1, k2 = r1.shape[:2]
    ey1, ey2, ex, sy1, sy2, cx, _ = _mats(s, k1, k2)
    b1, b2 = _analyze(v, ey1, ey2, ex)
    o1 = np.einsum("nabi,abio->nabo", b1, r1)
    o2 = np.einsum("nabi,abio->nabo", b2, r2)
    return _synthesize(o1, o2, sy1, sy2, cx)


class SpectralLayer:
    """One Fourier layer: spectral mixing plus a pointwise residual path."""

    def __init__(self, width: int, k1: int, k2: int, rng: np.random.Generator):
        scale = 1.0 / (width * width)
        shape = (k1, k2, width, width)
        self.r1_re = Tensor(rng.uniform(0.0, scale, shape), requires_grad=True)
        self.r1_im = Tensor(rng.uniform(0.0, scale, shape), requires_grad=True)
        self.r2_re = Tensor(rng.uniform(0.0, scale, shape), requires_grad=True)
        self.r2_im = Tensor(rng.uniform(0.0, scale, shape), requires_grad=True)
        bound = math.sqrt(6.0 / (2 * width))
        self.w = Tensor(rng.uniform(-bound, bound, (width, width)), requires_grad=True)
        self.b = Tensor(np.zeros(width), requires_grad=True)
        self.width = width
        self.k1 = k1
        self.k2 = k2

    def parameters(self) -> list[Tensor]:
        return [self.r1_re, self.r1_im, self.r2_re, self.r2_im, self.w, self.b]

    @property
    def param_count(self) -> int:
        k_retained = 2 * self.k1 * self.k2
        return 2 * k_retained * self.width**2 + self.width**2 + self.width

    def spectral(self, v: Tensor) -> Tensor:
        s = v.data.shape[1]
        ey1, ey2, ex, sy1, sy2, cx, col_scale = _mats(s, self.k1, self.k2)
        r1 = self.r1_re.data + 1j * self.r1_im.data
        r2 = self.r2_re.data + 1j * self.r2_im.data
        b1, b2 = _analyze(v.data, ey1, ey2, ex)
        o1 = np.einsum("nabi,abio->nabo", b1, r1)
        o2 = np.einsum("nabi,abio->nabo", b2, r2)
        out = _synthesize(o1, o2, sy1, sy2, cx)
        layer = self

        def bwd(g, v=v, b1=b1, b2=b2, r1=r1, r2=r2):
            u1, u2 = _analyze(g, ey1, ey2, ex)
            scale = col_scale[None, None, :, None]
            if layer.r1_re.requires_grad:
                gr1 = np.einsum("nabi,nabo->abio", b1.conj(), u1 * scale)
                gr2 = np.einsum("nabi,nabo->abio", b2.conj(), u2 * scale)
                layer.r1_re._accumulate(gr1.real)
                layer.r1_im._accumulate(gr1.imag)
                layer.r2_re._accumulate(gr2.real)
                layer.r2_im._accumulate(gr2.imag)
            if v.requires_grad:
                h1 = np.einsum("nabo,abio->nabi", u1, r1.conj())
                h2 = np.einsum("nabo,abio->nabi", u2, r2.conj())
                v._accumulate(_synthesize(h1, h2, sy1, sy2, cx))

        return Tensor._node(out, (v, self.r1_re, self.r1_im, self.r2_re, self.r2_im), bwd)

    def __call__(self, v: Tensor) -> Tensor:
        n, s, _, w = v.data.shape
        res = v.reshape(n * s * s, w) @ self.w + self.b
        return ad.gelu(self.spectral(v) + res.reshape(n, s, s, w))


@dataclass
class FnoModel:
    width: int
    modes: tuple[int, int]
    p_net: DenseNet
    layers: list[SpectralLayer]
    q_net: DenseNet
    coords: bool = True
    layout_version: int = LAYOUT_VERSION

    @property
    def param_count(self) -> int:
        return self.p_net.param_count + sum(l.param_count for l in self.layers) + self.q_net.param_count

    def parameters(self) -> list[Tensor]:
        params = self.p_net.parameters() + self.q_net.parameters()
        for layer in self.layers:
            params += layer.parameters()
        return params


def build_fno(
    modes: tuple[int, int] | int,
    width: int,
    n_layers: int = 4,
    coords: bool = True,
    q_hidden: int = 128,
    seed=0,
) -> FnoModel:
    """Fresh model with the usual lifting / T spectral layers / projection."""
    if isinstance(modes, int):
        modes = (modes, modes)
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(200,))
    p_seed, q_seed, *layer_seeds = seq.spawn(2 + n_layers)
    in_ch = 3 if coords else 1
    p_net = DenseNet([(in_ch, width, "identity")])
    p_net.initialize("xavier", p_seed)
    q_net = DenseNet([(width, q_hidden, "gelu"), (q_hidden, 1, "identity")])
    q_net.initialize("xavier", q_seed)
    layers = [SpectralLayer(width, modes[0], modes[1], np.random.default_rng(ls)) for ls in layer_seeds]
    return FnoModel(width=width, modes=modes, p_net=p_net, layers=layers, q_net=q_net, coords=coords)


def _coord_channels(n: int, s: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, s)
    x, y = np.meshgrid(axis, axis)
    grid = np.stack([x, y], axis=-1)  # (s, s, 2)
    return np.broadcast_to(grid, (n, s, s, 2))


def fno_forward(model: FnoModel, lam) -> Tensor:
    """Apply the operator to a batch; ``lam`` is an (n, s, s) array or Tensor."""
    lam_t = lam if isinstance(lam, Tensor) else Tensor(lam)
    n, s = lam_t.data.shape[0], lam_t.data.shape[1]
    if model.modes[0] > s // 2 or model.modes[1] > s // 2:
        raise ResolutionError(f"grid {s} does not admit retained modes {model.modes}")
    x = lam_t.reshape(n, s, s, 1)
    if model.coords:
        x = ad.concat([x, Tensor(_coord_channels(n, s))], axis=-1)
    in_ch = x.data.shape[-1]
    v = model.p_net(x.reshape(n * s * s, in_ch)).reshape(n, s, s, model.width)
    for layer in model.layers:
        v = layer(v)
    out = model.q_net(v.reshape(n * s * s, model.width))
    return out.reshape(n, s, s)


def fno_apply(model: FnoModel, lam: GridField) -> GridField:
    """Single-field evaluation; the grid may differ from the training grid."""
    return GridField(fno_forward(model, lam.values[None]).data[0])


def fno_predict_batch(model: FnoModel, lams: np.ndarray, batch: int = 50) -> np.ndarray:
    out = np.empty_like(lams)
    for start in range(0, lams.shape[0], batch):
        stop = start + batch
        out[start:stop] = fno_forward(model, lams[start:stop]).data
    return out


def train_fno(
    train,
    modes: tuple[int, int] | int,
    width: int,
    optim: OptimConfig,
    n_layers: int = 4,
    coords: bool = True,
    q_hidden: int = 128,
) -> FnoModel:
    """Train on (input field -> output field) pairs with the per-sample
    relative L2 loss summed over each batch."""
    if isinstance(train, SampleSet):
        inputs, outputs = train.lambdas, train.solutions
    else:
        inputs, outputs = train
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    model = build_fno(modes, width, n_layers=n_layers, coords=coords, q_hidden=q_hidden, seed=optim.seed)
    params = model.parameters()
    optimizer = make_optimizer(params, optim)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=optim.seed, spawn_key=(201,)))
    flat_targets = outputs.reshape(n, -1)
    for epoch in range(optim.epochs):
        lr = optim.lr_at(epoch)
        for idx in minibatches(n, optim.batch_size, rng):
            pred = fno_forward(model, inputs[idx])
            loss = rel_l2_loss(pred.reshape(len(idx), -1), flat_targets[idx])
            loss.backward()
            optimizer_step(optimizer, params, lr)
    return model
