"""Untrained spatio-spectral generators and their fitting loop.

A cube estimate is a rank-R linear mixture: R abundance maps times R
endmember spectra, summed as outer products. Each abundance map comes from
its own hourglass convolutional generator driven by a fixed random latent;
each spectrum comes from its own small dense generator. Nothing is
pretrained: the only signal the parameters ever see is the iterate they are
fitted to.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError, FitDivergedError

_MIN_SPATIAL = 9  # three stride-2 stages need >= 2 pixels at the deepest scale

_CKPT_MAGIC = "MIXCKPT"
_CKPT_VERSION = "v1"


@dataclass(frozen=True)
class FitConfig:
    """Adam settings for one fitting call."""

    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    iters_per_step: int = 10

    def __post_init__(self):
        # zero is allowed so a no-op fit stays expressible in diagnostics
        if self.learning_rate < 0.0:
            raise ContractError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.iters_per_step < 1:
            raise ContractError(f"iters_per_step must be >= 1, got {self.iters_per_step}")


class _ChannelGate(nn.Module):
    """Squeeze-excite gate: pooled squeeze, two dense layers, sigmoid scale."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        s = x.mean(dim=(2, 3))
        s = F.silu(self.fc1(s))
        gate = torch.sigmoid(self.fc2(s))
        return x * gate[:, :, None, None]


class _Down(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False)
        self.norm1 = nn.InstanceNorm2d(cout, affine=True)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.norm2 = nn.InstanceNorm2d(cout, affine=True)

    def forward(self, x):
        x = F.silu(self.norm1(self.conv1(x)))
        return F.silu(self.norm2(self.conv2(x)))


class _Up(nn.Module):
    """Upsample, concatenate a thin skip projection, convolve, gate.

    Skips pass through a 1x1 bottleneck of a few channels: enough to align
    scales, narrow enough that pixel-level detail cannot bypass the
    hourglass (that bottleneck is what makes the untrained net favor smooth
    structure over noise)."""

    def __init__(self, cin: int, cskip: int, cout: int, upsample: str, skip_ch: int = 4):
        super().__init__()
        self.upsample = upsample
        self.skip_proj = nn.Conv2d(cskip, skip_ch, 1) if cskip else None
        merged = cin + (skip_ch if cskip else 0)
        self.conv = nn.Conv2d(merged, cout, 3, padding=1, bias=False)
        self.norm = nn.InstanceNorm2d(cout, affine=True)
        self.gate = _ChannelGate(cout)

    def forward(self, x, skip, size):
        x = F.interpolate(x, size=size, mode=self.upsample)
        if skip is not None:
            x = torch.cat([x, self.skip_proj(skip)], dim=1)
        x = F.silu(self.norm(self.conv(x)))
        return self.gate(x)


class SpatialNet(nn.Module):
    """Hourglass generator for one abundance map.

    Three stride-2 encoder stages, a mirrored interpolating decoder with
    thin skip concatenation and a channel gate after each stage, linear 1x1
    head. The latent is registered as a buffer: the optimizer never sees it.
    """

    def __init__(
        self,
        height: int,
        width: int,
        latent: np.ndarray,
        widths: tuple[int, int, int] = (8, 16, 32),
        upsample: str = "bilinear",
    ):
        super().__init__()
        if min(height, width) < _MIN_SPATIAL:
            raise ContractError(
                f"spatial dims must be >= {_MIN_SPATIAL}, got {height}x{width}"
            )
        self.height, self.width = height, width
        c0 = latent.shape[0]
        w1, w2, w3 = widths
        self.enc1 = _Down(c0, w1)
        self.enc2 = _Down(w1, w2)
        self.enc3 = _Down(w2, w3)
        self.dec3 = _Up(w3, w2, w2, upsample)
        self.dec2 = _Up(w2, w1, w1, upsample)
        self.dec1 = _Up(w1, 0, w1, upsample)
        self.head = nn.Conv2d(w1, 1, 1)
        self.register_buffer("latent", torch.as_tensor(latent))

    def forward(self):
        z = self.latent[None]
        e1 = self.enc1(z)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        d = self.dec3(e3, e2, e2.shape[-2:])
        d = self.dec2(d, e1, e1.shape[-2:])
        d = self.dec1(d, None, (self.height, self.width))
        return self.head(d)[0, 0]


class SpectralNet(nn.Module):
    """Dense generator for one endmember spectrum, linear output head."""

    def __init__(self, bands: int, latent: np.ndarray, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(latent.shape[0], hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, bands)
        self.register_buffer("latent", torch.as_tensor(latent))

    def forward(self):
        h = F.silu(self.fc1(self.latent))
        h = F.silu(self.fc2(h))
        return self.fc3(h)


class MixtureModel(nn.Module):
    """R independent spatial generators paired with R spectral generators."""

    def __init__(self, spatial: list[SpatialNet], spectral: list[SpectralNet], shape):
        super().__init__()
        if len(spatial) != len(spectral) or not spatial:
            raise ContractError("need the same positive number of generators per type")
        self.spatial = nn.ModuleList(spatial)
        self.spectral = nn.ModuleList(spectral)
        self.shape = tuple(shape)

    @property
    def rank(self) -> int:
        return len(self.spatial)

    @property
    def torch_dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype


def init_model(
    shape: tuple[int, int, int],
    rank: int,
    seed: int,
    dtype: torch.dtype = torch.float32,
    latent_channels: int = 8,
    spectral_latent: int = 32,
    widths: tuple[int, int, int] = (8, 16, 32),
    upsample: str = "bilinear",
) -> MixtureModel:
    """Fresh model with torch-default (fan-in scaled uniform) weights.

    Spatial latents are i.i.d. uniform on [0, 0.1]; spectral latents are
    i.i.d. standard normal. Fully determined by ``seed``; distinct ranks use
    distinct substreams. Reseeds torch's global generator, so construction
    does not depend on prior torch state.
    """
    if rank < 1:
        raise ContractError(f"rank must be >= 1, got {rank}")
    h, w, b = shape
    seq = np.random.SeedSequence(seed)
    torch_seed, latent_seed = seq.spawn(2)
    torch.manual_seed(int(torch_seed.generate_state(1)[0]))
    lat_rng = np.random.default_rng(latent_seed)
    spatial, spectral = [], []
    for _ in range(rank):
        z = lat_rng.uniform(0.0, 0.1, size=(latent_channels, h, w))
        spatial.append(SpatialNet(h, w, z, widths=widths, upsample=upsample))
        wvec = lat_rng.standard_normal(spectral_latent)
        spectral.append(SpectralNet(b, wvec))
    model = MixtureModel(spatial, spectral, shape)
    return model.to(dtype)


def eval_spatial(gen: SpatialNet) -> torch.Tensor:
    """Abundance map of one generator, shape (height, width)."""
    return gen()


def eval_spectral(gen: SpectralNet) -> torch.Tensor:
    """Spectrum of one generator, shape (bands,)."""
    return gen()


def compose_torch(model: MixtureModel) -> torch.Tensor:
    """Differentiable flattened estimate: sum of map-spectrum outer products."""
    h, w, b = model.shape
    acc = None
    for smap, spec in zip(model.spatial, model.spectral):
        term = smap()[:, :, None] * spec()[None, None, :]
        acc = term if acc is None else acc + term
    # flatten in the cube linearization order (column-major per band)
    return acc.permute(2, 1, 0).reshape(-1)


def compose(model: MixtureModel) -> np.ndarray:
    """Flattened estimate as a float64 numpy vector."""
    with torch.no_grad():
        return compose_torch(model).cpu().numpy().astype(np.float64)


def compose_terms(maps: list[np.ndarray], spectra: list[np.ndarray]) -> np.ndarray:
    """Numpy mirror of the composition for given raw factors."""
    if len(maps) != len(spectra) or not maps:
        raise ContractError("need the same positive number of maps and spectra")
    cube = np.zeros(maps[0].shape + spectra[0].shape)
    for smap, spec in zip(maps, spectra):
        cube += smap[:, :, None] * spec[None, None, :]
    return cube.ravel(order="F")


def loss_value(model: MixtureModel, x_t: np.ndarray, signal_scale: float) -> float:
    """Squared-error fit loss of the scaled composition against x_t."""
    if signal_scale <= 0.0:
        raise ContractError(f"signal scale must be > 0, got {signal_scale}")
    x_t = np.asarray(x_t, dtype=np.float64)
    resid = x_t - signal_scale * compose(model)
    return float(resid @ resid)


def fit(
    model: MixtureModel,
    x_t: np.ndarray,
    signal_scale: float,
    cfg: FitConfig,
    opt_state: torch.optim.Adam | None = None,
):
    """Run cfg.iters_per_step Adam updates of all generator parameters.

    The model and optimizer are updated in place and returned; passing the
    returned optimizer back in carries the moments across calls.
    """
    if signal_scale <= 0.0:
        raise ContractError(f"signal scale must be > 0, got {signal_scale}")
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (int(np.prod(model.shape)),):
        raise ContractError(
            f"target length {x_t.shape} does not match model size {np.prod(model.shape)}"
        )
    if opt_state is None:
        opt_state = torch.optim.Adam(
            model.parameters(),
            lr=cfg.learning_rate,
            betas=(cfg.adam_beta1, cfg.adam_beta2),
            eps=cfg.adam_eps,
        )
    target = torch.as_tensor(x_t, dtype=model.torch_dtype)
    for it in range(cfg.iters_per_step):
        opt_state.zero_grad(set_to_none=True)
        resid = target - signal_scale * compose_torch(model)
        loss = (resid * resid).sum()
        if not torch.isfinite(loss):
            raise FitDivergedError("non-finite fit loss", it)
        loss.backward()
        opt_state.step()
    return model, opt_state


def gradient(
    model: MixtureModel, x_t: np.ndarray, signal_scale: float
) -> dict[str, np.ndarray]:
    """Exact loss gradient for every parameter; latents are excluded."""
    x_t = np.asarray(x_t, dtype=np.float64)
    model.zero_grad(set_to_none=True)
    target = torch.as_tensor(x_t, dtype=model.torch_dtype)
    resid = target - signal_scale * compose_torch(model)
    (resid * resid).sum().backward()
    grads = {}
    for name, p in model.named_parameters():
        g = p.grad
        grads[name] = (
            np.zeros(p.shape) if g is None else g.detach().cpu().numpy().astype(np.float64)
        )
    model.zero_grad(set_to_none=True)
    return grads


def save_checkpoint(model: MixtureModel, path: str | Path) -> None:
    """Header line plus flat float32 parameters in registration order.

    Fixed latents are not stored; rebuilding the model with its init seed
    reproduces them."""
    flats = [p.detach().cpu().numpy().astype("<f4").ravel() for _, p in model.named_parameters()]
    payload = np.concatenate(flats)
    h, w, b = model.shape
    header = (
        f"{_CKPT_MAGIC} {_CKPT_VERSION} I={h} J={w} K={b} R={model.rank} "
        f"count={payload.size}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes())


def load_checkpoint(model: MixtureModel, path: str | Path) -> MixtureModel:
    """Load parameters saved by save_checkpoint into a matching model."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if header[:2] != [_CKPT_MAGIC, _CKPT_VERSION]:
            raise ContractError(f"not a checkpoint file: {header[:2]}")
        fields = dict(tok.split("=") for tok in header[2:])
        payload = np.frombuffer(fh.read(), dtype="<f4")
    if int(fields["count"]) != payload.size:
        raise ContractError(
            f"checkpoint payload has {payload.size} values, header says {fields['count']}"
        )
    offset = 0
    with torch.no_grad():
        for _, p in model.named_parameters():
            chunk = payload[offset : offset + p.numel()]
            if chunk.size != p.numel():
                raise ContractError("checkpoint does not match the model layout")
            p.copy_(torch.as_tensor(chunk.reshape(p.shape).copy(), dtype=p.dtype))
            offset += p.numel()
    if offset != payload.size:
        raise ContractError("checkpoint does not match the model layout")
    return model
