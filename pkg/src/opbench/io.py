"""Binary persistence for datasets and trained models.

Both formats are little-endian: an 8-byte magic string, a u32 format
version, a small fixed or key=value header, then raw float64 payloads in
row-major order.  Loaders validate magic, refuse newer versions, and check
exact payload sizes so truncated files fail cleanly.

Dataset payload stores (lambda_i, u_i_clean) per sample - exactly
2 * n * s^2 doubles; the measurement-noise view is regenerated
deterministically from the recorded noise level and seed on load.
"""

from __future__ import annotations

import struct

import numpy as np

from .datagen import MeasureTag, Problem, SampleSet
from .deeponet import DeepONetModel, grid_points
from .fno import FnoModel, SpectralLayer, build_fno
from .inversion import with_noise
from .nets import DenseNet
from .pcann import PcaBasis, PcannModel

DATASET_MAGIC = b"OPBDSET1"
MODEL_MAGIC = b"OPBMODL1"
FORMAT_VERSION = 1

_DATASET_HEADER = struct.Struct("<8sIBBHIQdq")


class FormatError(ValueError):
    """File does not parse as a valid, supported artifact."""


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated file: wanted {count} bytes, got {len(data)}")
    return data


def _check_header(magic: bytes, expected: bytes, version: int) -> None:
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}")
    if version > FORMAT_VERSION:
        raise FormatError(f"file format version {version} is newer than supported {FORMAT_VERSION}")


# ---- datasets ----

_PROBLEM_CODE = {Problem.POISSON: 0, Problem.DARCY: 1}
_TAG_CODE = {MeasureTag.GAUSSIAN: 0, MeasureTag.LOG_NORMAL: 1, MeasureTag.PIECEWISE_CONSTANT: 2}


def save_dataset(path, data: SampleSet) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _DATASET_HEADER.pack(
                DATASET_MAGIC, FORMAT_VERSION, _PROBLEM_CODE[data.problem], _TAG_CODE[data.tag],
                0, data.s, data.n, data.delta, data.seed,
            )
        )
        stacked = np.stack([data.lambdas, data.solutions_clean], axis=1)  # (n, 2, s, s)
        fh.write(np.ascontiguousarray(stacked, dtype="<f8").tobytes())


def load_dataset(path) -> SampleSet:
    with open(path, "rb") as fh:
        magic, version, problem_code, tag_code, _, s, n, delta, seed = _DATASET_HEADER.unpack(
            _read_exact(fh, _DATASET_HEADER.size)
        )
        _check_header(magic, DATASET_MAGIC, version)
        payload = _read_exact(fh, n * 2 * s * s * 8)
        if fh.read(1):
            raise FormatError("trailing bytes after dataset payload")
    stacked = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(n, 2, s, s)
    problem = {v: k for k, v in _PROBLEM_CODE.items()}[problem_code]
    tag = {v: k for k, v in _TAG_CODE.items()}[tag_code]
    clean = SampleSet(
        problem=problem, tag=tag, s=s, delta=0.0, seed=seed,
        lambdas=np.ascontiguousarray(stacked[:, 0]),
        solutions_clean=np.ascontiguousarray(stacked[:, 1]),
        solutions=np.ascontiguousarray(stacked[:, 1]),
    )
    return with_noise(clean, delta)


# ---- models ----

_KIND_CODES = {"pcann": 0, "pcalin": 1, "fno": 2, "deeponet": 3}


def _write_meta(fh, meta: dict) -> None:
    blob = "\n".join(f"{k}={v}" for k, v in meta.items()).encode()
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_meta(fh) -> dict:
    (length,) = struct.unpack("<I", _read_exact(fh, 4))
    blob = _read_exact(fh, length).decode()
    return dict(line.split("=", 1) for line in blob.splitlines() if line)


def _write_arrays(fh, arrays: list[tuple[str, np.ndarray]]) -> None:
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        encoded = name.encode()
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_arrays(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, name_len).decode()
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(_read_exact(fh, size * 8), dtype="<f8").astype(np.float64).reshape(shape)
    return arrays


def _layer_spec(net: DenseNet) -> str:
    return ";".join(f"{fi},{fo},{act}" for fi, fo, act in net.layers)


def _net_from_spec(spec: str) -> DenseNet:
    layers = []
    for part in spec.split(";"):
        fi, fo, act = part.split(",")
        layers.append((int(fi), int(fo), act))
    return DenseNet(layers)


def _net_arrays(prefix: str, net: DenseNet) -> list[tuple[str, np.ndarray]]:
    out = []
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out.append((f"{prefix}_w{k}", w.data))
        out.append((f"{prefix}_b{k}", b.data))
    return out


def _fill_net(net: DenseNet, prefix: str, arrays: dict) -> None:
    for k in range(len(net.layers)):
        net.weights[k].data = arrays[f"{prefix}_w{k}"].copy()
        net.biases[k].data = arrays[f"{prefix}_b{k}"].copy()


def save_model(path, model) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        if isinstance(model, PcannModel):
            fh.write(struct.pack("<B", _KIND_CODES[model.kind]))
            _write_meta(fh, {
                "net": _layer_spec(model.net),
                "s_in": model.input_basis.s, "s_out": model.output_basis.s,
            })
            arrays = [
                ("in_components", model.input_basis.components),
                ("in_singular_values", model.input_basis.singular_values),
                ("in_mean", model.input_basis.mean),
                ("in_scale", model.in_scale),
                ("out_components", model.output_basis.components),
                ("out_singular_values", model.output_basis.singular_values),
                ("out_mean", model.output_basis.mean),
                ("out_scale", model.out_scale),
            ] + _net_arrays("net", model.net)
            _write_arrays(fh, arrays)
        elif isinstance(model, FnoModel):
            fh.write(struct.pack("<B", _KIND_CODES["fno"]))
            _write_meta(fh, {
                "width": model.width, "k1": model.modes[0], "k2": model.modes[1],
                "n_layers": len(model.layers), "coords": int(model.coords),
                "q_hidden": model.q_net.layers[0][1], "layout_version": model.layout_version,
            })
            arrays = _net_arrays("p", model.p_net) + _net_arrays("q", model.q_net)
            for k, layer in enumerate(model.layers):
                arrays += [
                    (f"layer{k}_r1_re", layer.r1_re.data), (f"layer{k}_r1_im", layer.r1_im.data),
                    (f"layer{k}_r2_re", layer.r2_re.data), (f"layer{k}_r2_im", layer.r2_im.data),
                    (f"layer{k}_w", layer.w.data), (f"layer{k}_b", layer.b.data),
                ]
            _write_arrays(fh, arrays)
        elif isinstance(model, DeepONetModel):
            fh.write(struct.pack("<B", _KIND_CODES["deeponet"]))
            _write_meta(fh, {
                "branch": _layer_spec(model.branch), "trunk": _layer_spec(model.trunk),
                "sensor_s": model.sensor_s,
            })
            arrays = _net_arrays("branch", model.branch) + _net_arrays("trunk", model.trunk)
            arrays.append(("bias", model.bias.data))
            _write_arrays(fh, arrays)
        else:
            raise TypeError(f"cannot serialise model of type {type(model).__name__}")


def load_model(path):
    from .autodiff import Tensor

    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8)
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        _check_header(magic, MODEL_MAGIC, version)
        (kind_code,) = struct.unpack("<B", _read_exact(fh, 1))
        meta = _read_meta(fh)
        arrays = _read_arrays(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after model payload")

    kind = {v: k for k, v in _KIND_CODES.items()}[kind_code]
    if kind in ("pcann", "pcalin"):
        net = _net_from_spec(meta["net"])
        _fill_net(net, "net", arrays)
        input_basis = PcaBasis(
            s=int(meta["s_in"]), components=arrays["in_components"],
            singular_values=arrays["in_singular_values"], mean=arrays["in_mean"],
        )
        output_basis = PcaBasis(
            s=int(meta["s_out"]), components=arrays["out_components"],
            singular_values=arrays["out_singular_values"], mean=arrays["out_mean"],
        )
        return PcannModel(
            input_basis=input_basis, output_basis=output_basis, net=net, kind=kind,
            in_scale=arrays["in_scale"].copy(), out_scale=arrays["out_scale"].copy(),
        )
    if kind == "fno":
        model = build_fno(
            (int(meta["k1"]), int(meta["k2"])), int(meta["width"]),
            n_layers=int(meta["n_layers"]), coords=bool(int(meta["coords"])),
            q_hidden=int(meta["q_hidden"]),
        )
        model.layout_version = int(meta["layout_version"])
        if model.layout_version > 1:
            raise FormatError(f"unsupported spectral weight layout version {model.layout_version}")
        _fill_net(model.p_net, "p", arrays)
        _fill_net(model.q_net, "q", arrays)
        for k, layer in enumerate(model.layers):
            layer.r1_re.data = arrays[f"layer{k}_r1_re"].copy()
            layer.r1_im.data = arrays[f"layer{k}_r1_im"].copy()
            layer.r2_re.data = arrays[f"layer{k}_r2_re"].copy()
            layer.r2_im.data = arrays[f"layer{k}_r2_im"].copy()
            layer.w.data = arrays[f"layer{k}_w"].copy()
            layer.b.data = arrays[f"layer{k}_b"].copy()
        return model
    if kind == "deeponet":
        branch = _net_from_spec(meta["branch"])
        trunk = _net_from_spec(meta["trunk"])
        _fill_net(branch, "branch", arrays)
        _fill_net(trunk, "trunk", arrays)
        sensor_s = int(meta["sensor_s"])
        return DeepONetModel(
            branch=branch, trunk=trunk, bias=Tensor(arrays["bias"].copy(), requires_grad=True),
            sensors=grid_points(sensor_s), sensor_s=sensor_s,
        )
    raise FormatError(f"unknown model kind code {kind_code}")
