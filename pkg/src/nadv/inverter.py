"""Inverter mapping data rows back to latent vectors.

Trained against a frozen generator to minimize

    E ||G(I(x)) - x||  +  lam * E ||z - I(G(z))||^2

over data rows x and prior draws z. The reconstruction norm is plain L2 by
default; "squared_l2" is accepted since either reading is defensible. The
divergence term is always squared L2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint, nn
from .errors import DimensionError, DivergenceError, PairingError
from .gan import GanModel

RECON_NORMS = ("l2", "squared_l2")
_NORM_EPS = 1e-12


@dataclass
class InverterModel:
    net: nn.DenseNet      # data_dim -> latent_dim
    gan_hash: str         # content hash of the generator pair it inverts
    lam: float = 0.1
    recon_norm: str = "l2"

    def __post_init__(self):
        if self.lam < 0:
            raise DimensionError(f"lam must be >= 0, got {self.lam}")
        if self.recon_norm not in RECON_NORMS:
            raise DimensionError(
                f"recon_norm must be one of {RECON_NORMS}, got "
                f"{self.recon_norm!r}"
            )

    @property
    def data_dim(self) -> int:
        return self.net.input_dim

    @property
    def latent_dim(self) -> int:
        return self.net.output_dim


@dataclass
class InverterTrainConfig:
    steps: int = 10000
    batch_size: int = 64
    lam: float = 0.1
    recon_norm: str = "l2"
    hidden: tuple[int, ...] = (64, 64, 64)
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise DimensionError("steps and batch_size must be >= 1")
        if self.lam < 0:
            raise DimensionError(f"lam must be >= 0, got {self.lam}")
        if self.recon_norm not in RECON_NORMS:
            raise DimensionError(
                f"recon_norm must be one of {RECON_NORMS}, got "
                f"{self.recon_norm!r}"
            )


def check_pair(gan: GanModel, inv: InverterModel) -> None:
    """Reject an inverter used with a generator it was not trained on."""
    actual = checkpoint.content_hash(gan)
    if actual != inv.gan_hash:
        raise PairingError(
            f"inverter was trained against generator {inv.gan_hash} but "
            f"got {actual}"
        )
    if inv.data_dim != gan.data_dim or inv.latent_dim != gan.latent_dim:
        raise DimensionError(
            f"inverter dims ({inv.data_dim} -> {inv.latent_dim}) do not "
            f"match generator ({gan.latent_dim} -> {gan.data_dim})"
        )


def _recon_value(diff: np.ndarray, norm: str) -> float:
    if norm == "l2":
        return float(np.linalg.norm(diff, axis=1).mean())
    return float((diff ** 2).sum(axis=1).mean())


def inverter_loss(gan: GanModel, inv: InverterModel, x_batch: np.ndarray,
                  z_batch: np.ndarray) -> tuple[float, float, float]:
    """(total, reconstruction term, divergence term); total is exactly
    recon + lam * div."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    z_batch = np.asarray(z_batch, dtype=np.float64)
    recon = _recon_value(
        gan.generate(invert(inv, x_batch)) - x_batch, inv.recon_norm)
    z_cycle = invert(inv, gan.generate(z_batch))
    div = float(((z_cycle - z_batch) ** 2).sum(axis=1).mean())
    return recon + inv.lam * div, recon, div


def train_inverter(gan: GanModel, data: np.ndarray,
                   cfg: InverterTrainConfig) -> tuple[InverterModel, list[tuple[float, float, float]]]:
    """Train only the inverter; generator and critic stay untouched.

    Returns the model and one (total, recon, div) entry per step.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != gan.data_dim:
        raise DimensionError(
            f"data shape {data.shape} does not match generator output dim "
            f"{gan.data_dim}"
        )
    if data.shape[0] < cfg.batch_size:
        raise DimensionError(
            f"need at least batch_size={cfg.batch_size} rows, got "
            f"{data.shape[0]}"
        )
    rng = np.random.default_rng(cfg.seed)
    net = nn.init_net([gan.data_dim, *cfg.hidden, gan.latent_dim],
                      hidden_activation="relu", output_activation="identity",
                      rng=rng)
    model = InverterModel(net, checkpoint.content_hash(gan), lam=cfg.lam,
                          recon_norm=cfg.recon_norm)
    opt = nn.AdamState.for_net(net, lr=cfg.lr, beta1=cfg.beta1,
                               beta2=cfg.beta2)
    gen = gan.generator
    n, b = data.shape[0], cfg.batch_size
    history: list[tuple[float, float, float]] = []

    for step in range(cfg.steps):
        # Reconstruction term: push d||G(I(x)) - x|| back through the
        # frozen generator into the inverter.
        x = data[rng.choice(n, size=b, replace=False)]
        tr_inv = nn.forward(net, x)
        tr_gen = nn.forward(gen, tr_inv.output)
        diff = tr_gen.output - x
        if cfg.recon_norm == "l2":
            norms = np.linalg.norm(diff, axis=1, keepdims=True)
            d_out = diff / (b * np.maximum(norms, _NORM_EPS))
            recon = float(norms.mean())
        else:
            d_out = 2.0 * diff / b
            recon = float((diff ** 2).sum(axis=1).mean())
        _, d_latent = nn.backward(gen, tr_gen, d_out)
        g_recon, _ = nn.backward(net, tr_inv, d_latent)

        # Divergence term: latent round-trip through the frozen generator.
        z = rng.standard_normal((b, gan.latent_dim))
        x_gen = nn.forward(gen, z).output
        tr_cycle = nn.forward(net, x_gen)
        delta = tr_cycle.output - z
        div = float((delta ** 2).sum(axis=1).mean())
        g_div, _ = nn.backward(net, tr_cycle, 2.0 * delta / b)

        total = recon + cfg.lam * div
        if not np.isfinite(total):
            raise DivergenceError(
                f"inverter loss became non-finite at step {step}"
            )
        grads = [(gr[0] + cfg.lam * gd[0], gr[1] + cfg.lam * gd[1])
                 for gr, gd in zip(g_recon, g_div)]
        nn.adam_step(net, grads, opt)
        history.append((total, recon, div))
    return model, history


def invert(inv: InverterModel, x: np.ndarray) -> np.ndarray:
    """Latent codes for data rows; pure feedforward."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    out = nn.forward(inv.net, x[None, :] if squeeze else x).output
    return out[0] if squeeze else out


def reconstruct(gan: GanModel, inv: InverterModel, x: np.ndarray) -> np.ndarray:
    """G(I(x)); the nearest the generator pair comes to reproducing x."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    out = gan.generate(nn.forward(inv.net, x[None, :] if squeeze else x).output)
    return out[0] if squeeze else out


def _encode_inverter(inv: InverterModel):
    meta = {"kind": "inverter", "gan_hash": inv.gan_hash, "lam": inv.lam,
            "recon_norm": inv.recon_norm,
            "acts": [l.activation for l in inv.net.layers]}
    arrays = []
    for i, layer in enumerate(inv.net.layers):
        arrays.append((f"net.w{i}", layer.weight))
        arrays.append((f"net.b{i}", layer.bias))
    return meta, arrays


def _decode_inverter(meta, arrays) -> InverterModel:
    layers = [nn.Layer(arrays[f"net.w{i}"], arrays[f"net.b{i}"], act)
              for i, act in enumerate(meta["acts"])]
    return InverterModel(nn.DenseNet(layers), meta["gan_hash"],
                         lam=meta["lam"], recon_norm=meta["recon_norm"])


checkpoint.register("inverter", InverterModel, _encode_inverter,
                    _decode_inverter)
