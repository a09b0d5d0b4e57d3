"""The symmetry-plane regressor.

Pipeline per input grid: global encoder over all H height channels, slice
encoder shared across the N slices, a stack of ConvGRU layers consuming the
slices bottom-to-top (hidden states initialized from the global features),
a 5-layer offset decoder shared across slices, and a constrained
least-squares plane head on the assembled world-space points.

Both encoders are 4-layer 3x3 conv stacks (GN + ReLU) with layers 2 and 4 at
stride 2, so features come out at 1/4 the input resolution.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import BadMagic, ShapeMismatch, VersionError
from .geometry import Plane, plane_from_homogeneous
from .grid import GridSpec, OccupancyGrid, anchor_grid_coords, make_slices

CHECKPOINT_MAGIC = b"SYMW"
CHECKPOINT_VERSION = 1
DECODER_LAYERS = 5
STRIDE_FACTOR = 4


@dataclass(frozen=True)
class ModelConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    enc_channels: tuple[int, ...] = (16, 16, 16, 16)
    gru_layers: int = 3
    gru_hidden: int = 32
    gru_kernel: int = 3
    decoder_channels: tuple[int, ...] = (32, 32, 16, 16, 3)
    seed: int = 0

    def __post_init__(self):
        if self.gru_layers < 1:
            raise ValueError("gru_layers must be >= 1")
        if len(self.enc_channels) != 4:
            raise ValueError("encoder has exactly 4 conv layers")
        if len(self.decoder_channels) != DECODER_LAYERS:
            raise ValueError("decoder has exactly 5 conv layers")
        if self.decoder_channels[-1] != 3:
            raise ValueError("decoder must end in 3 offset channels")
        if self.gru_kernel % 2 == 0:
            raise ValueError("gru_kernel must be odd")


def _gn_groups(c: int) -> int:
    for g in (8, 4, 2):
        if c % g == 0:
            return g
    return 1


def _conv_shapes(prefix: str, widths, c_in: int, kernel: int = 3, with_gn=None):
    """Yield (name, shape) for a conv stack's weights/biases/GN affines."""
    shapes = []
    if with_gn is None:
        with_gn = [True] * len(widths)
    for i, (c_out, gn) in enumerate(zip(widths, with_gn)):
        shapes.append((f"{prefix}.conv{i}.w", (c_out, c_in, kernel, kernel)))
        shapes.append((f"{prefix}.conv{i}.b", (c_out,)))
        if gn:
            shapes.append((f"{prefix}.conv{i}.gamma", (c_out,)))
            shapes.append((f"{prefix}.conv{i}.beta", (c_out,)))
        c_in = c_out
    return shapes


def parameter_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    g = cfg.grid
    shapes = []
    shapes += _conv_shapes("global_enc", cfg.enc_channels, g.H)
    shapes += _conv_shapes("slice_enc", cfg.enc_channels, 2 * g.K + 1)
    feat_c = 2 * cfg.enc_channels[-1]  # [slice feat, global feat] concat
    k = cfg.gru_kernel
    hid = cfg.gru_hidden
    for layer in range(cfg.gru_layers):
        shapes += _conv_shapes(f"init_hidden{layer}", [hid], cfg.enc_channels[-1])
        x_c = feat_c if layer == 0 else hid
        for gate in ("z", "r", "h"):
            shapes.append((f"gru{layer}.{gate}.w", (hid, x_c + hid, k, k)))
            shapes.append((f"gru{layer}.{gate}.b", (hid,)))
    with_gn = [True] * (DECODER_LAYERS - 1) + [False]
    shapes += _conv_shapes("decoder", cfg.decoder_channels, hid, with_gn=with_gn)
    return shapes


class ModelParams:
    """Named parameter tensors."""

    def __init__(self, tensors: dict[str, ag.Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> ag.Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()


def init_params(cfg: ModelConfig) -> ModelParams:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases,
    GN gamma 1/beta 0, GRU update-gate bias +1."""
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, ag.Tensor] = {}
    for name, shape in parameter_shapes(cfg):
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith(".b") and ".z." in name:
            data = np.ones(shape)  # bias the update gate toward memory early on
        else:
            data = np.zeros(shape)
        tensors[name] = ag.Tensor(data, requires_grad=True)
    return ModelParams(tensors)


def _conv_gn_relu(x, p: ModelParams, prefix: str, i: int, stride: int):
    w = p[f"{prefix}.conv{i}.w"]
    y = ag.conv2d(x, w, p[f"{prefix}.conv{i}.b"], stride=stride, pad=(w.shape[2] - 1) // 2)
    c = w.shape[0]
    y = ag.group_norm(y, _gn_groups(c), p[f"{prefix}.conv{i}.gamma"], p[f"{prefix}.conv{i}.beta"])
    return ag.relu(y)


def _encoder(x, p: ModelParams, prefix: str):
    for i in range(4):
        x = _conv_gn_relu(x, p, prefix, i, stride=2 if i in (1, 3) else 1)
    return x


def global_encode(g, p: ModelParams):
    """Encode the whole grid (H channels) to [C, D/4, W/4] features."""
    if isinstance(g, OccupancyGrid):
        g = g.values
    x = ag.Tensor(np.asarray(g, dtype=np.float64))
    return _encoder(x, p, "global_enc")


def slice_encode(s, p: ModelParams):
    """Encode one slice (2K+1 channels); parameters shared across slices."""
    channels = s.channels if hasattr(s, "channels") else s
    x = ag.Tensor(np.asarray(channels, dtype=np.float64))
    return _encoder(x, p, "slice_enc")


def init_hidden(global_feat, p: ModelParams, cfg: ModelConfig):
    """One conv+GN+ReLU per GRU layer, applied to the global features."""
    return [
        _conv_gn_relu(global_feat, p, f"init_hidden{layer}", 0, stride=1)
        for layer in range(cfg.gru_layers)
    ]


def gru_step(x, hiddens, p: ModelParams, cfg: ModelConfig):
    """One recurrent step through all GRU layers; returns the new hiddens.

    The update and reset gates share their [x, h] input, so their convs are
    fused into a single call on stacked weights; gradients still land on the
    per-gate parameter tensors through the concat.
    """
    caxis = -3 if x.data.ndim == 3 else 1
    new_hiddens = []
    inp = x
    for layer in range(cfg.gru_layers):
        h = hiddens[layer]
        hid = h.shape[caxis]
        wz, wr = p[f"gru{layer}.z.w"], p[f"gru{layer}.r.w"]
        pad = (wz.shape[2] - 1) // 2
        xin = ag.concat([inp, h], axis=caxis)
        zr = ag.conv2d(
            xin,
            ag.concat([wz, wr], axis=0),
            ag.concat([p[f"gru{layer}.z.b"], p[f"gru{layer}.r.b"]], axis=0),
            stride=1,
            pad=pad,
        )
        z = ag.sigmoid(ag.narrow(zr, caxis, 0, hid))
        r = ag.sigmoid(ag.narrow(zr, caxis, hid, hid))
        xrh = ag.concat([inp, ag.mul(r, h)], axis=caxis)
        wh = p[f"gru{layer}.h.w"]
        cand = ag.tanh(ag.conv2d(xrh, wh, p[f"gru{layer}.h.b"], stride=1, pad=pad))
        keep = ag.mul(ag.add_scalar(ag.scalar_mul(z, -1.0), 1.0), h)
        h_new = ag.add(keep, ag.mul(z, cand))
        new_hiddens.append(h_new)
        inp = h_new
    return new_hiddens


def decode(h_top, p: ModelParams):
    """Five 3x3 convs: GN+ReLU on the first four, raw 3-channel offsets last."""
    x = h_top
    for i in range(DECODER_LAYERS - 1):
        x = _conv_gn_relu(x, p, "decoder", i, stride=1)
    w = p[f"decoder.conv{DECODER_LAYERS - 1}.w"]
    return ag.conv2d(x, w, p[f"decoder.conv{DECODER_LAYERS - 1}.b"], stride=1, pad=(w.shape[2] - 1) // 2)


@dataclass
class ForwardOutput:
    offsets: ag.Tensor  # [N, 3, D/4, W/4] (or [B, N, 3, D/4, W/4] batched)
    points: np.ndarray  # |P| x 3 world-space points
    plane: Plane
    beta: ag.Tensor  # homogeneous 4-vector, ||beta|| = 1
    eigengap: float = 0.0


def predict_offsets_batch(grids: np.ndarray, p: ModelParams, cfg: ModelConfig) -> ag.Tensor:
    """Offsets [B, N, 3, D/4, W/4] for a batch of occupancy grids [B, H, D, W]."""
    spec = cfg.grid
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim != 4 or grids.shape[1:] != (spec.H, spec.D, spec.W):
        raise ShapeMismatch(f"expected grids [B,{spec.H},{spec.D},{spec.W}], got {grids.shape}")
    bs = grids.shape[0]
    gfeat = _encoder(ag.Tensor(grids), p, "global_enc")
    hiddens = init_hidden(gfeat, p, cfg)
    per_sample = [make_slices(OccupancyGrid(grids[b].astype(np.uint8), spec)) for b in range(bs)]
    # all N slices of all samples in one encoder pass (params are shared);
    # layout is step-major: rows [step*B + b]
    slabs = np.concatenate(
        [
            np.stack([per_sample[b][step].channels for b in range(bs)])
            for step in range(spec.N)
        ]
    ).astype(np.float64)
    sfeat_all = _encoder(ag.Tensor(slabs), p, "slice_enc")
    tops = []
    for step in range(spec.N):
        sfeat = ag.narrow(sfeat_all, 0, step * bs, bs)
        x = ag.concat([sfeat, gfeat], axis=1)
        hiddens = gru_step(x, hiddens, p, cfg)
        tops.append(hiddens[-1])
    # decode all steps in one shared pass, step-major again
    off_all = decode(ag.concat(tops, axis=0), p)  # [N*B, 3, Dq, Wq]
    dq, wq = off_all.shape[2], off_all.shape[3]
    off = ag.reshape(off_all, (spec.N, bs, 3, dq, wq))
    return ag.permute(off, (1, 0, 2, 3, 4))


def plane_from_offsets(offsets: ag.Tensor, cfg: ModelConfig):
    """LS plane head for one sample's offsets [N, 3, D/4, W/4].

    Returns (beta Tensor, points ndarray, Plane, eigengap).
    """
    spec = cfg.grid
    anchors = anchor_grid_coords(spec, STRIDE_FACTOR)  # N x Dq x Wq x 3
    anchors_t = np.transpose(anchors, (0, 3, 1, 2))  # N x 3 x Dq x Wq
    pts = ag.add(offsets, ag.Tensor(anchors_t))
    n_pts = spec.N * (spec.D // STRIDE_FACTOR) * (spec.W // STRIDE_FACTOR)
    flat = ag.reshape(ag.permute(pts, (0, 2, 3, 1)), (n_pts, 3))
    a_mat = ag.concat([flat, ag.Tensor(np.ones((n_pts, 1)))], axis=1)
    m = ag.gram(a_mat)
    beta = ag.smallest_eigenvector(m)
    from .autograd.eigen import jacobi_eigh

    vals, _ = jacobi_eigh(m.data)
    gap = float(vals[1] - vals[0])
    plane = plane_from_homogeneous(beta.data)
    return beta, flat.data.copy(), plane, gap


def forward(cloud_or_grid, p: ModelParams, cfg: ModelConfig) -> ForwardOutput:
    """Full pipeline for one normalized cloud (or prebuilt OccupancyGrid)."""
    from .grid import voxelize

    if isinstance(cloud_or_grid, OccupancyGrid):
        g = cloud_or_grid
    else:
        g = voxelize(cloud_or_grid, cfg.grid)
    offsets_b = predict_offsets_batch(g.values[None].astype(np.float64), p, cfg)
    offsets = ag.select(offsets_b, 0)
    beta, points, plane, gap = plane_from_offsets(offsets, cfg)
    return ForwardOutput(offsets=offsets, points=points, plane=plane, beta=beta, eigengap=gap)


# -- checkpoint I/O ----------------------------------------------------------

def save_params(p: ModelParams, path, cfg: ModelConfig | None = None) -> None:
    """Binary checkpoint; bit-exact round trip.  Writes a JSON config sidecar
    alongside when cfg is given."""
    names = sorted(p.tensors)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(names)))
        for name in names:
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            t = p.tensors[name]
            f.write(struct.pack("<I", t.data.ndim))
            for dim in t.data.shape:
                f.write(struct.pack("<Q", dim))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    if cfg is not None:
        with open(str(path) + ".json", "w") as f:
            json.dump(config_to_dict(cfg), f, indent=2)


def load_params(path, cfg: ModelConfig | None = None) -> ModelParams:
    """Load a checkpoint; validates shapes against cfg when provided."""
    tensors: dict[str, ag.Tensor] = {}
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != CHECKPOINT_MAGIC:
            raise BadMagic(f"{path} is not a SYMW checkpoint")
        version, count = struct.unpack("<II", head[4:12])
        if version != CHECKPOINT_VERSION:
            raise VersionError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        for _ in range(count):
            raw = f.read(4)
            if len(raw) < 4:
                raise BadMagic(f"{path} is truncated")
            (nlen,) = struct.unpack("<I", raw)
            name = f.read(nlen).decode("utf-8")
            raw = f.read(4)
            if len(raw) < 4:
                raise BadMagic(f"{path} is truncated")
            (rank,) = struct.unpack("<I", raw)
            dims = struct.unpack("<" + "Q" * rank, f.read(8 * rank))
            size = int(np.prod(dims)) if rank else 1
            buf = f.read(8 * size)
            if len(buf) < 8 * size:
                raise BadMagic(f"{path} is truncated")
            data = np.frombuffer(buf, dtype="<f8").reshape(dims).copy()
            tensors[name] = ag.Tensor(data, requires_grad=True)
    if cfg is not None:
        expected = dict(parameter_shapes(cfg))
        if set(expected) != set(tensors):
            raise ShapeMismatch("checkpoint parameter names do not match config")
        for name, shape in expected.items():
            if tensors[name].data.shape != shape:
                raise ShapeMismatch(
                    f"{name}: checkpoint {tensors[name].data.shape}, config {shape}"
                )
    return ModelParams(tensors)


def config_to_dict(cfg: ModelConfig) -> dict:
    g = cfg.grid
    return {
        "H": g.H,
        "D": g.D,
        "W": g.W,
        "N": g.N,
        "K": g.K,
        "enc_channels": list(cfg.enc_channels),
        "gru_layers": cfg.gru_layers,
        "gru_hidden": cfg.gru_hidden,
        "gru_kernel": cfg.gru_kernel,
        "decoder_channels": list(cfg.decoder_channels),
        "seed": cfg.seed,
    }


def config_from_dict(d: dict) -> ModelConfig:
    known = {
        "H", "D", "W", "N", "K", "enc_channels", "gru_layers", "gru_hidden",
        "gru_kernel", "decoder_channels", "seed",
    }
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    grid = GridSpec(
        H=d.get("H", 32), D=d.get("D", 32), W=d.get("W", 32),
        N=d.get("N", 8), K=d.get("K", 2),
    )
    return ModelConfig(
        grid=grid,
        enc_channels=tuple(d.get("enc_channels", (16, 16, 16, 16))),
        gru_layers=d.get("gru_layers", 3),
        gru_hidden=d.get("gru_hidden", 32),
        gru_kernel=d.get("gru_kernel", 3),
        decoder_channels=tuple(d.get("decoder_channels", (32, 32, 16, 16, 3))),
        seed=d.get("seed", 0),
    )
