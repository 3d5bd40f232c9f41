"""Wasserstein GAN with gradient penalty over normalized data rows.

The critic is trained to maximize E[C(x_real)] - E[C(x_fake)] with a
penalty pulling the norm of its input gradient at interpolates toward 1;
the generator minimizes -E[C(G(z))]. The prior is standard normal.

The penalty term needs gradients of a function of the critic's input
gradient, so this module carries its own second backward pass over the
critic instead of reusing nn.backward; see _penalty_and_grads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, nn
from .errors import DimensionError, DivergenceError

_NORM_EPS = 1e-12


@dataclass
class GanModel:
    generator: nn.DenseNet  # latent_dim -> data_dim
    critic: nn.DenseNet     # data_dim -> 1

    def __post_init__(self):
        if self.generator.output_dim != self.critic.input_dim:
            raise DimensionError(
                f"generator emits {self.generator.output_dim}-dim rows but "
                f"critic expects {self.critic.input_dim}"
            )
        if self.critic.output_dim != 1:
            raise DimensionError(
                f"critic must be scalar-valued, got output dim "
                f"{self.critic.output_dim}"
            )

    @property
    def latent_dim(self) -> int:
        return self.generator.input_dim

    @property
    def data_dim(self) -> int:
        return self.generator.output_dim

    def generate(self, z: np.ndarray) -> np.ndarray:
        return nn.forward(self.generator, z).output


@dataclass
class GanSpec:
    """Network shapes; hidden activations follow common WGAN practice
    (relu generator with tanh output, leaky-relu critic)."""

    latent_dim: int
    data_dim: int
    gen_hidden: tuple[int, ...] = (64, 64, 64)
    critic_hidden: tuple[int, ...] = (64, 64, 64)


@dataclass
class GanTrainConfig:
    steps: int = 20000           # generator steps
    batch_size: int = 64
    critic_iters: int = 5
    gp_weight: float = 10.0
    lr: float = 1e-4
    lr_decay: bool = False  # ramp lr linearly to 0 over the run
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise DimensionError(f"steps must be >= 1, got {self.steps}")
        if self.gp_weight < 0:
            raise DimensionError(
                f"gp_weight must be >= 0, got {self.gp_weight}")
        if self.batch_size < 1 or self.critic_iters < 1:
            raise DimensionError("batch_size and critic_iters must be >= 1")


def build_gan(spec: GanSpec, rng: np.random.Generator) -> GanModel:
    gen = nn.init_net([spec.latent_dim, *spec.gen_hidden, spec.data_dim],
                      hidden_activation="relu", output_activation="tanh",
                      rng=rng)
    critic = nn.init_net([spec.data_dim, *spec.critic_hidden, 1],
                         hidden_activation="leaky_relu",
                         output_activation="identity", rng=rng)
    return GanModel(gen, critic)


def _input_grad_chain(critic: nn.DenseNet, x_hat: np.ndarray):
    """Forward pass plus the reverse sweep producing d(sum C)/d(x_hat).

    Returns (pre, post, s_list, v_list, input_grad) where s_list[i] and
    v_list[i] are the intermediates of the reverse sweep at layer i:
    v[i] = gradient w.r.t. post[i], s[i] = act'(pre[i]) * v[i].
    """
    pre, post = [], []
    h = x_hat
    for layer in critic.layers:
        a = h @ layer.weight.T + layer.bias
        pre.append(a)
        h = nn.activate(layer.activation, a)
        post.append(h)
    n_layers = len(critic.layers)
    v_list: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    s_list: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    v = np.ones_like(post[-1])
    for i in range(n_layers - 1, -1, -1):
        v_list[i] = v
        s = nn.activate_grad(critic.layers[i].activation, pre[i]) * v
        s_list[i] = s
        v = s @ critic.layers[i].weight
    return pre, post, s_list, v_list, v


def interpolate_grad_norms(critic: nn.DenseNet, x_hat: np.ndarray) -> np.ndarray:
    """Per-row L2 norm of the critic's input gradient."""
    *_, g = _input_grad_chain(critic, np.asarray(x_hat, dtype=np.float64))
    return np.linalg.norm(g, axis=1)


def gradient_penalty(critic: nn.DenseNet, x_real: np.ndarray,
                     x_fake: np.ndarray, rng: np.random.Generator) -> float:
    """Mean squared deviation of interpolate gradient norms from 1, with
    one uniform mixing coefficient per row."""
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise DimensionError(
            f"real batch {x_real.shape} and fake batch {x_fake.shape} differ"
        )
    u = rng.uniform(size=(x_real.shape[0], 1))
    x_hat = u * x_real + (1.0 - u) * x_fake
    norms = interpolate_grad_norms(critic, x_hat)
    return float(np.mean((norms - 1.0) ** 2))


def _penalty_and_grads(critic: nn.DenseNet, x_hat: np.ndarray):
    """Penalty value and its gradient w.r.t. critic parameters.

    The penalty P = mean_j (||g_j|| - 1)^2 is a function of the input
    gradient g = d(sum C)/d(x_hat), itself produced by a reverse sweep, so
    parameter gradients need a second reverse pass over that sweep. The
    sweep computes v[L]=1, s[i] = act'(pre[i]) * v[i], v[i-1] = s[i] @ W[i];
    differentiating it gives one parameter-gradient contribution per
    appearance of W in the sweep plus injected gradients at each pre[i]
    (through act'), which are then pushed back through the ordinary forward
    graph.
    """
    b = x_hat.shape[0]
    pre, post, s_list, v_list, g = _input_grad_chain(critic, x_hat)
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    penalty = float(np.mean((norms[:, 0] - 1.0) ** 2))
    # dP/dg, guarding the non-differentiable zero-gradient corner
    u_seed = (2.0 / b) * (norms - 1.0) * g / np.maximum(norms, _NORM_EPS)

    n_layers = len(critic.layers)
    dw = [np.zeros_like(l.weight) for l in critic.layers]
    db = [np.zeros_like(l.bias) for l in critic.layers]
    a_tilde: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]

    # Reverse the sweep itself: v_prev = s @ W gives dP/ds and a direct
    # dP/dW term; s = act'(pre) * v gives dP/dv for the next layer and an
    # injected dP/dpre through the activation curvature.
    v_bar = u_seed
    for i in range(n_layers):
        layer = critic.layers[i]
        s_bar = v_bar @ layer.weight.T
        dw[i] += s_list[i].T @ v_bar
        a_tilde[i] = nn.activate_curv(layer.activation, pre[i]) * v_list[i] * s_bar
        v_bar = nn.activate_grad(layer.activation, pre[i]) * s_bar
    # v[L] is constant, so v_bar ends unused.

    # Push the injected pre-activation gradients through the forward graph.
    r = np.zeros_like(post[-1])
    for i in range(n_layers - 1, -1, -1):
        layer = critic.layers[i]
        d = a_tilde[i] + nn.activate_grad(layer.activation, pre[i]) * r
        h_prev = x_hat if i == 0 else post[i - 1]
        dw[i] += d.T @ h_prev
        db[i] += d.sum(axis=0)
        r = d @ layer.weight
    return penalty, list(zip(dw, db))


def _add_grads(*grad_lists):
    out = []
    for parts in zip(*grad_lists):
        dw = sum(p[0] for p in parts)
        db = sum(p[1] for p in parts)
        out.append((dw, db))
    return out


def _scale_grads(grads, c: float):
    return [(dw * c, db * c) for dw, db in grads]


def train_wgan(data: np.ndarray, spec: GanSpec,
               cfg: GanTrainConfig) -> tuple[GanModel, list[tuple[float, float]]]:
    """Returns the trained model and one (critic_loss, gen_loss) pair per
    generator step; fully determined by cfg.seed."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != spec.data_dim:
        raise DimensionError(
            f"data shape {data.shape} does not match spec data_dim "
            f"{spec.data_dim}"
        )
    if data.shape[0] < cfg.batch_size:
        raise DimensionError(
            f"need at least batch_size={cfg.batch_size} rows, got "
            f"{data.shape[0]}"
        )
    rng = np.random.default_rng(cfg.seed)
    model = build_gan(spec, rng)
    gen, critic = model.generator, model.critic
    opt_g = nn.AdamState.for_net(gen, lr=cfg.lr, beta1=cfg.beta1,
                                 beta2=cfg.beta2)
    opt_c = nn.AdamState.for_net(critic, lr=cfg.lr, beta1=cfg.beta1,
                                 beta2=cfg.beta2)
    n, b = data.shape[0], cfg.batch_size
    history: list[tuple[float, float]] = []

    for step in range(cfg.steps):
        if cfg.lr_decay:
            opt_g.lr = opt_c.lr = cfg.lr * (1.0 - step / cfg.steps)
        critic_loss = 0.0
        for _ in range(cfg.critic_iters):
            x_real = data[rng.choice(n, size=b, replace=False)]
            z = rng.standard_normal((b, model.latent_dim))
            x_fake = nn.forward(gen, z).output

            tr_fake = nn.forward(critic, x_fake)
            tr_real = nn.forward(critic, x_real)
            g_fake, _ = nn.backward(critic, tr_fake,
                                    np.full((b, 1), 1.0 / b))
            g_real, _ = nn.backward(critic, tr_real,
                                    np.full((b, 1), -1.0 / b))

            u = rng.uniform(size=(b, 1))
            x_hat = u * x_real + (1.0 - u) * x_fake
            penalty, g_pen = _penalty_and_grads(critic, x_hat)

            critic_loss = (float(tr_fake.output.mean())
                           - float(tr_real.output.mean())
                           + cfg.gp_weight * penalty)
            if not np.isfinite(critic_loss):
                raise DivergenceError(
                    f"critic loss became non-finite at generator step {step}"
                )
            nn.adam_step(critic, _add_grads(
                g_fake, g_real, _scale_grads(g_pen, cfg.gp_weight)), opt_c)

        z = rng.standard_normal((b, model.latent_dim))
        tr_gen = nn.forward(gen, z)
        tr_crit = nn.forward(critic, tr_gen.output)
        gen_loss = -float(tr_crit.output.mean())
        if not np.isfinite(gen_loss):
            raise DivergenceError(
                f"generator loss became non-finite at step {step}"
            )
        _, dx = nn.backward(critic, tr_crit, np.full((b, 1), -1.0 / b))
        g_gen, _ = nn.backward(gen, tr_gen, dx)
        nn.adam_step(gen, g_gen, opt_g)
        history.append((critic_loss, gen_loss))
    return model, history


def sample(gan: GanModel, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw z from the prior and map through the generator; returns (x, z)."""
    if n < 1:
        raise DimensionError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, gan.latent_dim))
    return gan.generate(z), z


def _encode_gan(gan: GanModel):
    meta = {"kind": "gan",
            "gen_acts": [l.activation for l in gan.generator.layers],
            "critic_acts": [l.activation for l in gan.critic.layers]}
    arrays = []
    for prefix, net in (("gen", gan.generator), ("critic", gan.critic)):
        for i, layer in enumerate(net.layers):
            arrays.append((f"{prefix}.w{i}", layer.weight))
            arrays.append((f"{prefix}.b{i}", layer.bias))
    return meta, arrays


def _decode_net(prefix: str, acts: list[str], arrays) -> nn.DenseNet:
    layers = []
    for i, act in enumerate(acts):
        layers.append(nn.Layer(arrays[f"{prefix}.w{i}"],
                               arrays[f"{prefix}.b{i}"], act))
    return nn.DenseNet(layers)


def _decode_gan(meta, arrays) -> GanModel:
    return GanModel(_decode_net("gen", meta["gen_acts"], arrays),
                    _decode_net("critic", meta["critic_acts"], arrays))


checkpoint.register("gan", GanModel, _encode_gan, _decode_gan)
