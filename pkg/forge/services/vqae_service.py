from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from ..config import VqConfig
from ..errors import DataError, NumericalError
from ..models import Heightmap, LatentCode, TrainCurves

logger = logging.getLogger(__name__)

DTYPE = torch.float64
DIVERGENCE_LIMIT = 1e6
CHECKPOINT_FORMAT = "forge-vq/1"
EVAL_CHUNK = 256


class VqAutoencoder(nn.Module):
    """Strided-conv encoder, nearest-neighbour codebook, transposed-conv decoder.

    Each encoder level halves the spatial side (kernel 4, stride 2, padding 1);
    the decoder mirrors it. Latent maps are channel-last: (B, g, g, D).
    """

    def __init__(self, config: VqConfig, input_side: int):
        super().__init__()
        g = config.latent_grid
        ratio = input_side // g
        if input_side % g or ratio < 2 or ratio & (ratio - 1):
            raise DataError(f"latent_grid {g} must divide input side {input_side} by a power of two >= 2")
        levels = ratio.bit_length() - 1
        self.config = config
        self.input_side = input_side

        hidden, embed = config.hidden_channels, config.embed_dim
        encoder: List[nn.Module] = []
        channels = 1
        for level in range(levels):
            last = level == levels - 1
            out = embed if last else hidden
            encoder.append(nn.Conv2d(channels, out, kernel_size=4, stride=2, padding=1, dtype=DTYPE))
            if not last:
                encoder.append(nn.ReLU())
            channels = out
        decoder: List[nn.Module] = []
        for level in range(levels):
            last = level == levels - 1
            out = 1 if last else hidden
            decoder.append(nn.ConvTranspose2d(channels, out, kernel_size=4, stride=2, padding=1, dtype=DTYPE))
            if not last:
                decoder.append(nn.ReLU())
            channels = out
        self.encoder = nn.Sequential(*encoder)
        self.decoder = nn.Sequential(*decoder)

        k = config.codebook_size
        self.codebook = nn.Parameter(torch.empty(k, embed, dtype=DTYPE).uniform_(-1.0 / k, 1.0 / k))

        if config.init == "zeros":
            with torch.no_grad():
                for layer in (*self.encoder, *self.decoder):
                    if isinstance(layer, (nn.Conv2d, nn.ConvTranspose2d)):
                        layer.weight.zero_()
                        layer.bias.zero_()

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x).permute(0, 2, 3, 1)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        # sigmoid keeps reconstructions in [0, 1] and maps 0 to 0.5
        return torch.sigmoid(self.decoder(z.permute(0, 3, 1, 2)))


def build_model(config: VqConfig, input_side: int) -> VqAutoencoder:
    """Seeded construction that leaves the global torch RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return VqAutoencoder(config, input_side)


@dataclass
class ForwardPass:
    z_e: torch.Tensor
    z_q: torch.Tensor
    indices: torch.Tensor
    z_st: torch.Tensor  # value of z_q, gradient of z_e
    x_hat: torch.Tensor


@dataclass
class LossParts:
    total: torch.Tensor
    recon: torch.Tensor
    codebook: torch.Tensor
    commit: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(v.detach()) for k, v in vars(self).items()}


def to_batch(maps: Sequence[Heightmap]) -> torch.Tensor:
    return torch.from_numpy(np.stack([m.pixels for m in maps]).astype(np.float64)).unsqueeze(1)


def quantize(z_e, codebook) -> Tuple[torch.Tensor, torch.Tensor]:
    """Snap every D-vector of z_e to its nearest codebook row (lowest index on ties)."""
    z_e = torch.as_tensor(z_e, dtype=DTYPE)
    codebook = torch.as_tensor(codebook, dtype=DTYPE)
    if z_e.shape[-1] != codebook.shape[1]:
        raise DataError(f"latent depth {z_e.shape[-1]} != codebook depth {codebook.shape[1]}")
    if not torch.isfinite(z_e).all():
        raise NumericalError("non-finite latent vector in quantize")
    flat = z_e.reshape(-1, z_e.shape[-1])
    dist = torch.cdist(flat.detach(), codebook.detach(), compute_mode="donot_use_mm_for_euclid_dist")
    indices = torch.argmin(dist, dim=1)
    z_q = codebook[indices].reshape(z_e.shape)
    return z_q, indices.reshape(z_e.shape[:-1])


def forward(model: VqAutoencoder, x: torch.Tensor) -> ForwardPass:
    z_e = model.encode(x)
    z_q, indices = quantize(z_e, model.codebook)
    # straight-through: decoder sees z_q, its gradient is copied onto z_e
    z_st = z_e + (z_q - z_e).detach()
    return ForwardPass(z_e=z_e, z_q=z_q, indices=indices, z_st=z_st, x_hat=model.decode(z_st))


def vq_loss(x, x_hat, z_e, z_q, beta: float) -> LossParts:
    """recon = pixel MSE; codebook/commit = mean over latent vectors of squared distance."""
    x, x_hat = torch.as_tensor(x, dtype=DTYPE), torch.as_tensor(x_hat, dtype=DTYPE)
    z_e, z_q = torch.as_tensor(z_e, dtype=DTYPE), torch.as_tensor(z_q, dtype=DTYPE)
    if x.shape != x_hat.shape or z_e.shape != z_q.shape:
        raise DataError(f"loss shapes differ: x {tuple(x.shape)} vs x_hat {tuple(x_hat.shape)}, "
                        f"z_e {tuple(z_e.shape)} vs z_q {tuple(z_q.shape)}")
    recon = torch.mean((x_hat - x) ** 2)
    codebook = torch.mean(torch.sum((z_e.detach() - z_q) ** 2, dim=-1))
    commit = torch.mean(torch.sum((z_e - z_q.detach()) ** 2, dim=-1))
    return LossParts(total=recon + codebook + beta * commit, recon=recon, codebook=codebook, commit=commit)


def compute_gradients(batch: torch.Tensor, model: VqAutoencoder, where: str = "batch") -> LossParts:
    """Fill `.grad` of every parameter for one batch; no update."""
    if batch.shape[0] == 0:
        raise DataError("empty batch")
    model.zero_grad(set_to_none=False)
    try:
        fp = forward(model, batch)
    except NumericalError as e:
        raise NumericalError(f"{where}: {e.detail}")
    parts = vq_loss(batch, fp.x_hat, fp.z_e, fp.z_q, model.config.beta)
    value = float(parts.total.detach())
    if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise NumericalError(f"{where}: loss {value} diverged")
    parts.total.backward()
    return parts


def backward_step(batch: torch.Tensor, model: VqAutoencoder, learning_rate: float,
                  where: str = "batch") -> LossParts:
    """One plain gradient-descent step; returns the batch loss before the update."""
    parts = compute_gradients(batch, model, where)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(p.grad, alpha=-learning_rate)
    return parts


@torch.no_grad()
def _squared_error(model: VqAutoencoder, x: torch.Tensor) -> torch.Tensor:
    """Per-sample sum of squared pixel errors through the quantized path."""
    out = []
    for start in range(0, x.shape[0], EVAL_CHUNK):
        chunk = x[start:start + EVAL_CHUNK]
        x_hat = forward(model, chunk).x_hat
        out.append(((x_hat - chunk) ** 2).flatten(1).sum(dim=1))
    return torch.cat(out)


def reconstruction_error(model: VqAutoencoder, maps: Sequence[Heightmap]) -> float:
    """Mean per-pixel MSE over all maps."""
    if not maps:
        raise DataError("no heightmaps to evaluate")
    x = to_batch(maps)
    return float(_squared_error(model, x).sum()) / x.numel()


def pair_errors(model: VqAutoencoder, maps: Sequence[Heightmap]) -> List[float]:
    x = to_batch(maps)
    pixels = x[0].numel()
    return [float(v) / pixels for v in _squared_error(model, x)]


def train(train_set: Sequence[Heightmap], test_set: Sequence[Heightmap],
          config: VqConfig) -> Tuple[VqAutoencoder, TrainCurves]:
    if not train_set:
        raise DataError("empty training set")
    if not test_set:
        raise DataError("empty test set")
    side = train_set[0].pixels.shape[0]
    x_train, x_test = to_batch(train_set), to_batch(test_set)
    if x_train.shape[-2:] != (side, side) or x_test.shape[-2:] != (side, side):
        raise DataError("heightmaps must share one square grid size")

    model = build_model(config, side)
    generator = torch.Generator().manual_seed(config.seed)
    curves = TrainCurves()
    n = x_train.shape[0]
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        for epoch in range(1, config.epochs + 1):
            order = torch.randperm(n, generator=generator)
            for b, start in enumerate(range(0, n, config.batch_size)):
                batch = x_train[order[start:start + config.batch_size]]
                backward_step(batch, model, config.learning_rate, where=f"epoch {epoch} batch {b}")

            train_mse = float(_squared_error(model, x_train).sum()) / x_train.numel()
            test_mse = float(_squared_error(model, x_test).sum()) / x_test.numel()
            if not (math.isfinite(train_mse) and math.isfinite(test_mse)) or max(train_mse, test_mse) > DIVERGENCE_LIMIT:
                raise NumericalError(f"epoch {epoch}: reconstruction error diverged "
                                     f"(train {train_mse}, test {test_mse})")
            curves.train_mse.append(train_mse)
            curves.test_mse.append(test_mse)
            logger.debug("epoch %d train_mse=%.6f test_mse=%.6f", epoch, train_mse, test_mse)
            if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
                logger.info("epoch %d/%d train_mse=%.6f test_mse=%.6f",
                            epoch, config.epochs, train_mse, test_mse)
    finally:
        torch.use_deterministic_algorithms(previous)
    return model, curves


def _check_map(x: Heightmap, model: VqAutoencoder) -> None:
    side = model.input_side
    if x.pixels.shape != (side, side):
        raise DataError(f"heightmap {x.building_id} has shape {x.pixels.shape}, model expects {(side, side)}")


@torch.no_grad()
def encode(x: Heightmap, model: VqAutoencoder) -> np.ndarray:
    """Pre-quantization latent map, shape (g, g, D)."""
    _check_map(x, model)
    return model.encode(to_batch([x]))[0].numpy()


@torch.no_grad()
def decode(z_q, model: VqAutoencoder) -> np.ndarray:
    z = torch.as_tensor(np.asarray(z_q), dtype=DTYPE)
    g, d = model.config.latent_grid, model.config.embed_dim
    if z.shape == (g * g * d,):
        z = z.reshape(g, g, d)
    if z.shape != (g, g, d):
        raise DataError(f"latent map has shape {tuple(z.shape)}, model expects {(g, g, d)}")
    return model.decode(z.unsqueeze(0))[0, 0].numpy()


@torch.no_grad()
def encode_all(maps: Sequence[Heightmap], model: VqAutoencoder, quantized: bool = True) -> List[LatentCode]:
    codes: List[LatentCode] = []
    for start in range(0, len(maps), EVAL_CHUNK):
        chunk = maps[start:start + EVAL_CHUNK]
        for m in chunk:
            _check_map(m, model)
        z_e = model.encode(to_batch(chunk))
        z_q, indices = quantize(z_e, model.codebook)
        latent = z_q if quantized else z_e
        for i, m in enumerate(chunk):
            codes.append(LatentCode(
                building_id=m.building_id,
                indices=indices[i].numpy().astype(np.int64),
                embedding=latent[i].reshape(-1).numpy().copy(),
            ))
    return codes


def codebook_usage(codes: Sequence[LatentCode]) -> int:
    return int(np.unique(np.concatenate([c.indices.ravel() for c in codes])).size)


def save_checkpoint(model: VqAutoencoder, path: Path, config_hash: Optional[str] = None) -> Path:
    """8-byte little-endian header length, JSON header, then float64 LE tensors."""
    tensors, blobs, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().numpy().astype("<f8").tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.model_dump(),
        "input_side": model.input_side,
        "tensors": tensors,
    }
    if config_hash:
        header["config_hash"] = config_hash
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.write_bytes(struct.pack("<Q", len(head)) + head + b"".join(blobs))
    return path


def read_checkpoint_header(path: Path) -> dict:
    data = Path(path).read_bytes()
    (size,) = struct.unpack_from("<Q", data, 0)
    return json.loads(data[8:8 + size].decode("utf-8"))


def load_checkpoint(path: Path) -> VqAutoencoder:
    data = Path(path).read_bytes()
    try:
        (size,) = struct.unpack_from("<Q", data, 0)
        header = json.loads(data[8:8 + size].decode("utf-8"))
    except (struct.error, ValueError) as e:
        raise DataError(f"{path}: unreadable checkpoint header ({e})")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    base = 8 + size
    model = build_model(VqConfig.model_validate(header["config"]), header["input_side"])
    state = {}
    for t in header["tensors"]:
        count = t["nbytes"] // 8
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=base + t["offset"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float64).reshape(t["shape"]))
    model.load_state_dict(state)
    return model
