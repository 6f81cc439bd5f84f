"""Latent-driven deep-prior generator and its per-scan training loop.

The generator is a fully connected modification head (m -> hidden -> s^2,
reshaped to an s x s seed image) followed by a convolutional reconstruction
stack (conv blocks alternating with 2x upsampling) ending in a 2-channel
head; the channels fuse to the complex image a + ib. All weights are real.

Training minimizes the mean squared k-space residual of batches of time
points; gradients flow through the (linear) radial sampling operator via its
exact adjoint. Everything is seeded: weight init and batch shuffling come
from numpy generators, so repeated runs produce identical loss traces.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import kspace
from .kspace import CoilSet, KSpaceFrames, Trajectory

CHECKPOINT_MAGIC = b"DPCKPT01"


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class NetSpec:
    latent_dim: int = 32
    hidden_dim: int = 128
    base_size: int = 4
    channels: int = 32
    stage_blocks: tuple[int, ...] = (2, 2, 2, 2, 2)  # base stage + one per 2x upsample
    out_size: int = 64
    negative_slope: float = 0.1
    upsample_mode: str = "bilinear"    # "nearest" available
    norm: str = "none"                 # "instance" available
    init_seed: int = 0

    def __post_init__(self):
        got = self.base_size * 2 ** (len(self.stage_blocks) - 1)
        if got != self.out_size:
            raise ValueError(
                f"base_size {self.base_size} with {len(self.stage_blocks) - 1} "
                f"upsample stages reaches {got}, not out_size {self.out_size}"
            )
        if self.upsample_mode not in ("bilinear", "nearest"):
            raise ValueError(f"unknown upsample_mode {self.upsample_mode!r}")
        if self.norm not in ("none", "instance"):
            raise ValueError(f"unknown norm {self.norm!r}")

    def param_count(self) -> int:
        m, h, s, c = self.latent_dim, self.hidden_dim, self.base_size, self.channels
        total = m * h + h + h * s * s + s * s          # the two affine layers
        in_ch = 1
        for blocks in self.stage_blocks:
            for _ in range(blocks):
                total += in_ch * c * 9 + c             # conv
                if self.norm == "instance":
                    total += 2 * c                     # norm affine
                in_ch = c
        total += c * 2 * 9 + 2                         # output head
        return total


def paper_scale_netspec(latent_dim: int = 32) -> NetSpec:
    """Full-scale architecture: 7x7 seed, five upsamples to 224, 128 channels."""
    return NetSpec(latent_dim=latent_dim, hidden_dim=512, base_size=7,
                   channels=128, stage_blocks=(2, 3, 3, 3, 3, 2), out_size=224)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    max_epochs: int = 2000
    min_epochs: int = 50
    stop_rel_change: float = 1e-3
    optimizer: str = "gd"              # "gd" (paper's update rule) or "adam"
    shuffle_seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 0          # epochs; 0 disables
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unknown dtype {self.dtype!r}")


@dataclass
class ModelParams:
    values: dict[str, np.ndarray]
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)

    def copy(self) -> "ModelParams":
        return ModelParams(values={k: v.copy() for k, v in self.values.items()},
                           epoch=self.epoch, loss_history=list(self.loss_history))


class _Generator(torch.nn.Module):
    def __init__(self, spec: NetSpec, dtype: torch.dtype):
        super().__init__()
        m, h, s, c = spec.latent_dim, spec.hidden_dim, spec.base_size, spec.channels
        self.spec = spec
        self.fc1 = torch.nn.Linear(m, h)
        self.fc2 = torch.nn.Linear(h, s * s)
        self.act = torch.nn.LeakyReLU(spec.negative_slope)
        stages = []
        in_ch = 1
        for si, blocks in enumerate(spec.stage_blocks):
            layers = []
            if si > 0:
                layers.append(torch.nn.Upsample(
                    scale_factor=2, mode=spec.upsample_mode,
                    align_corners=False if spec.upsample_mode == "bilinear" else None))
            for _ in range(blocks):
                layers.append(torch.nn.Conv2d(in_ch, c, 3, padding=1))
                if spec.norm == "instance":
                    layers.append(torch.nn.InstanceNorm2d(c, affine=True))
                layers.append(torch.nn.LeakyReLU(spec.negative_slope))
                in_ch = c
            stages.append(torch.nn.Sequential(*layers))
        self.stages = torch.nn.ModuleList(stages)
        self.head = torch.nn.Conv2d(c, 2, 3, padding=1)
        self.to(dtype)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        s = self.spec.base_size
        x = self.act(self.fc1(z))
        x = self.act(self.fc2(x))
        x = x.view(-1, 1, s, s)
        for stage in self.stages:
            x = stage(x)
        return self.head(x)


def _torch_dtype(name: str) -> torch.dtype:
    return torch.float64 if name == "float64" else torch.float32


def init_params(spec: NetSpec) -> ModelParams:
    """Fan-in scaled normal init, drawn from a seeded numpy generator."""
    net = _Generator(spec, torch.float64)
    rng = np.random.default_rng(spec.init_seed)
    values: dict[str, np.ndarray] = {}
    for name, p in net.named_parameters():
        shape = tuple(p.shape)
        if name.endswith("bias"):
            arr = np.zeros(shape)
        elif p.ndim == 1:
            arr = np.ones(shape)  # norm scale
        else:
            fan_in = int(np.prod(shape[1:]))
            arr = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
        values[name] = arr
    return ModelParams(values=values)


def _load_net(params: ModelParams, spec: NetSpec, dtype: torch.dtype) -> _Generator:
    net = _Generator(spec, dtype)
    with torch.no_grad():
        for name, p in net.named_parameters():
            p.copy_(torch.from_numpy(params.values[name]).to(dtype))
    return net


def _store_net(net: _Generator, params: ModelParams) -> None:
    with torch.no_grad():
        for name, p in net.named_parameters():
            params.values[name] = p.detach().cpu().double().numpy().copy()


class _SampledFourier(torch.autograd.Function):
    """Batch radial-sampling operator on 2-channel real images.

    forward: (B, 2, n, n) -> (B, 2, c, sp, nr) via the gridding NUFFT;
    backward applies the exact adjoint to the residual gradient.
    """

    @staticmethod
    def forward(ctx, x: torch.Tensor, coils: CoilSet, trajs: tuple[Trajectory, ...]):
        arr = x.detach().cpu().numpy()
        imgs = arr[:, 0].astype(np.complex128) + 1j * arr[:, 1]
        outs = np.stack([kspace.forward(imgs[b], coils, trajs[b])
                         for b in range(imgs.shape[0])])
        ctx.coils, ctx.trajs = coils, trajs
        out = np.stack([outs.real, outs.imag], axis=1)
        return torch.from_numpy(out).to(x.dtype)

    @staticmethod
    def backward(ctx, grad: torch.Tensor):
        g = grad.detach().cpu().numpy()
        gc = g[:, 0].astype(np.complex128) + 1j * g[:, 1]
        backs = np.stack([kspace.adjoint(gc[b], ctx.coils, ctx.trajs[b])
                          for b in range(gc.shape[0])])
        gi = np.stack([backs.real, backs.imag], axis=1)
        return torch.from_numpy(gi).to(grad.dtype), None, None


def _batch_loss(net: _Generator, z_batch: torch.Tensor, k_target: torch.Tensor,
                coils: CoilSet, trajs: tuple[Trajectory, ...]) -> torch.Tensor:
    pred = _SampledFourier.apply(net(z_batch), coils, trajs)
    return ((pred - k_target) ** 2).sum() / z_batch.shape[0]


def _stack_target(frames: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.stack([frames.real, frames.imag], axis=1)).to(dtype)


def generate(params: ModelParams, spec: NetSpec, z: np.ndarray) -> np.ndarray:
    """Evaluate the generator at one latent vector; returns an n x n complex image."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.latent_dim,):
        raise ValueError(f"z must have shape ({spec.latent_dim},), got {z.shape}")
    net = _load_net(params, spec, torch.float64)
    with torch.no_grad():
        out = net(torch.from_numpy(z[None]))[0].numpy()
    return out[0] + 1j * out[1]


def loss(params: ModelParams, spec: NetSpec, z_batch: np.ndarray,
         k_batch: np.ndarray, coils: CoilSet,
         trajs: tuple[Trajectory, ...]) -> float:
    """Mean squared k-space residual over the batch."""
    net = _load_net(params, spec, torch.float64)
    zb = torch.from_numpy(np.asarray(z_batch, dtype=float))
    kt = _stack_target(np.asarray(k_batch), torch.float64)
    with torch.no_grad():
        return float(_batch_loss(net, zb, kt, coils, trajs))


def grad(params: ModelParams, spec: NetSpec, z_batch: np.ndarray,
         k_batch: np.ndarray, coils: CoilSet,
         trajs: tuple[Trajectory, ...]) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradient of `loss` for every parameter."""
    net = _load_net(params, spec, torch.float64)
    zb = torch.from_numpy(np.asarray(z_batch, dtype=float))
    kt = _stack_target(np.asarray(k_batch), torch.float64)
    value = _batch_loss(net, zb, kt, coils, trajs)
    value.backward()
    return {name: p.grad.detach().numpy().copy()
            for name, p in net.named_parameters()}


def train(k: KSpaceFrames, coils: CoilSet, z_seq: np.ndarray, spec: NetSpec,
          cfg: TrainConfig, params: ModelParams | None = None
          ) -> tuple[ModelParams, list[float]]:
    """Batch-gradient training against the per-frame k-space observations.

    Stops once the epoch-mean loss changes by less than `stop_rel_change`
    relative to the previous epoch (and at least `min_epochs` ran), or at
    `max_epochs`. Returns the parameters and the per-epoch loss trace.
    """
    z_seq = np.asarray(z_seq, dtype=float)
    T = k.n_frames
    if z_seq.shape[0] != T:
        raise ValueError(f"latent count {z_seq.shape[0]} != frame count {T}")
    if cfg.batch_size > T:
        raise ValueError("batch_size exceeds the number of time points")

    dtype = _torch_dtype(cfg.dtype)
    if params is None:
        params = init_params(spec)
    net = _load_net(params, spec, dtype)
    z_all = torch.from_numpy(z_seq).to(dtype)
    k_all = _stack_target(k.frames, dtype)

    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    else:
        opt = torch.optim.SGD(net.parameters(), lr=cfg.learning_rate)

    rng = np.random.default_rng(cfg.shuffle_seed)
    trace = list(params.loss_history)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None

    for epoch in range(params.epoch, cfg.max_epochs):
        order = rng.permutation(T)
        epoch_loss = 0.0
        for lo in range(0, T, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch_trajs = tuple(k.trajectories[int(t)] for t in idx)
            opt.zero_grad()
            value = _batch_loss(net, z_all[idx], k_all[idx], coils, batch_trajs)
            value.backward()
            opt.step()
            epoch_loss += float(value.detach()) * len(idx)
        epoch_loss /= T
        if not math.isfinite(epoch_loss):
            _store_net(net, params)
            params.epoch = epoch
            params.loss_history = trace
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / "diverged.ckpt", params, spec)
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        trace.append(epoch_loss)
        done = epoch + 1
        if ckpt_dir is not None and cfg.checkpoint_every > 0 \
                and done % cfg.checkpoint_every == 0:
            _store_net(net, params)
            params.epoch = done
            params.loss_history = trace
            save_checkpoint(ckpt_dir / f"epoch{done:05d}.ckpt", params, spec)
        if done >= cfg.min_epochs and len(trace) >= 2:
            prev = trace[-2]
            if prev > 0 and abs(trace[-1] - prev) / prev < cfg.stop_rel_change:
                break

    _store_net(net, params)
    params.epoch = len(trace)
    params.loss_history = trace
    return params, trace


def reconstruct_dip(params: ModelParams, spec: NetSpec, z_seq: np.ndarray,
                    chunk: int = 16) -> np.ndarray:
    """Evaluate the trained generator at every z_t."""
    z_seq = np.asarray(z_seq, dtype=float)
    net = _load_net(params, spec, torch.float64)
    frames = []
    with torch.no_grad():
        for lo in range(0, z_seq.shape[0], chunk):
            out = net(torch.from_numpy(z_seq[lo:lo + chunk])).numpy()
            frames.append(out[:, 0] + 1j * out[:, 1])
    return np.concatenate(frames, axis=0)


def save_checkpoint(path: str | Path, params: ModelParams, spec: NetSpec) -> None:
    """Versioned binary: JSON header + little-endian float64 payloads.

    The loss trace is also written next to the checkpoint as CSV.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(params.values)
    header = {
        "netspec": {**spec.__dict__, "stage_blocks": list(spec.stage_blocks)},
        "epoch": params.epoch,
        "params": {name: list(params.values[name].shape) for name in names},
        "loss_history": params.loss_history,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(params.values[name], dtype="<f8").tobytes())
    with open(path.with_suffix(".loss.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        writer.writerows(enumerate(params.loss_history))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, NetSpec]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        ns = dict(header["netspec"])
        ns["stage_blocks"] = tuple(ns["stage_blocks"])
        spec = NetSpec(**ns)
        values = {}
        for name, shape in header["params"].items():
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
            values[name] = arr.copy()
    return ModelParams(values=values, epoch=header["epoch"],
                       loss_history=list(header["loss_history"])), spec
