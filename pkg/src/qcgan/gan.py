"""WGAN-GP training of quantum and classical generators against a dense critic."""
from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics, qgen
from .neural import AdamState, DiffNet, adam_step, make_classical_generator, make_critic, make_postprocessor
from .qgen import CircuitConfig, NoiseSpec

log = logging.getLogger(__name__)

GENERATOR_KINDS = ("quantum", "quantum_noisy", "classical")
CHECKPOINT_FORMAT = "qcgan-checkpoint"
CHECKPOINT_VERSION = 1
DESK_LR_GENERATOR = {"classical": 5e-4, "quantum": 1.5e-3}


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg: str, trace: "TrainTrace"):
        super().__init__(msg)
        self.trace = trace


@dataclass
class TrainConfig:
    generator_kind: str = "quantum"
    n_critic: int = 5
    gp_lambda: float = 10.0
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec.default_hardware)
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    lr_generator: float = 1e-4
    lr_critic: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    critic_spectral_norm: bool = True
    critic_dropout: float = 0.0
    postproc_hidden: int = 32
    classical_hidden: int = 33
    latent_scale: float = 3.0
    val_samples: int = 500
    checkpoint_metric: str = "validation_mmd"
    collapse_threshold: float = 0.05

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseSpec(**self.noise)
        if isinstance(self.circuit, dict):
            self.circuit = CircuitConfig(**self.circuit)
        if self.generator_kind not in GENERATOR_KINDS:
            raise ValueError(f"generator_kind must be one of {GENERATOR_KINDS}")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.gp_lambda < 0:
            raise ValueError("gp_lambda must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.checkpoint_metric != "validation_mmd":
            raise ValueError("only validation_mmd checkpointing is supported")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, kind: str = "quantum", seed: int = 0, epochs: int = 30) -> "TrainConfig":
        """Small-scale settings tuned for the 2,000-row synthetic run.

        Spectral normalization stays off here: stacked on the gradient penalty
        it over-constrains the critic and training stalls.
        """
        lr_gen = DESK_LR_GENERATOR["classical" if kind == "classical" else "quantum"]
        return cls(generator_kind=kind, epochs=epochs, seed=seed, batch_size=64,
                   lr_generator=lr_gen, lr_critic=2e-3, critic_spectral_norm=False)

    @property
    def effective_noise(self) -> NoiseSpec:
        return self.noise if self.generator_kind == "quantum_noisy" else qgen.NOISELESS


# --- generators --------------------------------------------------------------


class QuantumGenerator:
    """Variational circuit followed by a small dense post-processor."""

    kind = "quantum"

    def __init__(self, circuit: CircuitConfig, noise: NoiseSpec, theta: np.ndarray, post: DiffNet,
                 latent_scale: float = 3.0):
        self.circuit = circuit
        self.noise = noise
        self.theta = np.asarray(theta, dtype=float)
        self.post = post
        self.latent_scale = latent_scale

    @classmethod
    def create(cls, cfg: TrainConfig, rng: np.random.Generator) -> "QuantumGenerator":
        theta = qgen.init_params(cfg.circuit, rng)
        post = make_postprocessor(rng, cfg.circuit.num_qubits, cfg.postproc_hidden)
        return cls(cfg.circuit, cfg.effective_noise, theta, post, cfg.latent_scale)

    @property
    def features(self) -> int:
        return self.circuit.num_qubits

    def sample_latent(self, rng, n):
        return qgen.sample_latent(rng, n, self.circuit.num_qubits, self.latent_scale)

    def forward(self, z):
        q = qgen.generate(self.circuit, self.theta, z, self.noise)
        out, cache = self.post.forward(q)
        return out, (z, cache)

    def __call__(self, z):
        return self.forward(z)[0]

    def backward(self, cache, grad_out) -> list[np.ndarray]:
        z, post_cache = cache
        post_grads, grad_q = self.post.backward(post_cache, grad_out)
        g_theta = qgen.parameter_shift_grad(self.circuit, self.theta, z, self.noise, grad_q)
        return [g_theta] + post_grads

    def parameters(self) -> list[np.ndarray]:
        return [self.theta] + self.post.parameters()

    def set_parameters(self, params) -> None:
        self.theta = np.array(params[0], dtype=float)
        self.post.set_parameters(params[1:])

    def parameter_count(self) -> int:
        return self.circuit.num_params + self.post.parameter_count()

    def to_dict(self) -> dict:
        return {"kind": "quantum", "circuit": self.circuit.to_dict(), "noise": asdict(self.noise),
                "theta": self.theta.tolist(), "post": self.post.to_dict(), "latent_scale": self.latent_scale}


class ClassicalGenerator:
    kind = "classical"

    def __init__(self, net: DiffNet):
        self.net = net

    @classmethod
    def create(cls, cfg: TrainConfig, rng: np.random.Generator) -> "ClassicalGenerator":
        return cls(make_classical_generator(rng, 4, cfg.classical_hidden, 4))

    @property
    def features(self) -> int:
        return self.net.out_features

    def sample_latent(self, rng, n):
        return rng.standard_normal((n, self.net.in_features))

    def forward(self, z):
        return self.net.forward(z)

    def __call__(self, z):
        return self.net(z)

    def backward(self, cache, grad_out):
        return self.net.backward(cache, grad_out)[0]

    def parameters(self):
        return self.net.parameters()

    def set_parameters(self, params):
        self.net.set_parameters(params)

    def parameter_count(self) -> int:
        return self.net.parameter_count()

    def to_dict(self) -> dict:
        return {"kind": "classical", "net": self.net.to_dict()}


def generator_from_dict(d: dict):
    if d["kind"] == "classical":
        return ClassicalGenerator(DiffNet.from_dict(d["net"]))
    return QuantumGenerator(CircuitConfig(**d["circuit"]), NoiseSpec(**d["noise"]), np.array(d["theta"]),
                            DiffNet.from_dict(d["post"]), d["latent_scale"])


def make_generator(cfg: TrainConfig, rng):
    if cfg.generator_kind == "classical":
        return ClassicalGenerator.create(cfg, rng)
    return QuantumGenerator.create(cfg, rng)


# --- losses --------------------------------------------------------------------


def critic_loss(critic: DiffNet, real, fake, rng: np.random.Generator, gp_lambda: float = 10.0,
                mode: str = "eval"):
    """WGAN-GP critic objective and its parameter gradients.

    loss = mean D(fake) - mean D(real) + lambda * mean((||grad_x D(x_hat)|| - 1)^2)
    with x_hat = eps * real + (1 - eps) * fake, eps ~ U[0, 1] per row.
    Returns ``(loss, grads, parts)`` where ``parts`` has the three terms.
    """
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if real.shape[1] != fake.shape[1]:
        raise ValueError("real and fake batches differ in width")
    d_real, c_real = critic.forward(real, mode, rng)
    d_fake, c_fake = critic.forward(fake, mode, rng)
    g_real, _ = critic.backward(c_real, np.full_like(d_real, -1.0 / len(real)))
    g_fake, _ = critic.backward(c_fake, np.full_like(d_fake, 1.0 / len(fake)))
    eps = rng.random((len(real), 1))
    x_hat = eps * real + (1.0 - eps) * fake
    penalty, g_pen, _ = critic.gradient_penalty(x_hat, mode, rng)
    wdist = float(d_fake.mean() - d_real.mean())
    loss = wdist + gp_lambda * penalty
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite critic loss (wasserstein={wdist}, penalty={penalty})")
    grads = [a + b + gp_lambda * c for a, b, c in zip(g_real, g_fake, g_pen)]
    return loss, grads, {"wasserstein": wdist, "penalty": penalty}


def generator_loss(critic: DiffNet, fake):
    """-mean D(fake) and its gradient with respect to the fake rows."""
    fake = np.asarray(fake, dtype=float)
    d_fake, cache = critic.forward(fake)
    _, grad_fake = critic.backward(cache, np.full_like(d_fake, -1.0 / len(fake)))
    return float(-d_fake.mean()), grad_fake


# --- trace & checkpoints ------------------------------------------------------


@dataclass
class TrainTrace:
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    val_mmd: list = field(default_factory=list)
    feature_std: list = field(default_factory=list)
    initial_mmd: float | None = None
    best_epoch: int | None = None
    best_mmd: float | None = None
    critic_steps: int = 0
    generator_steps: int = 0
    critic_steps_per_generator_step: list = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.val_mmd)

    @property
    def min_feature_std(self) -> list[float]:
        return [float(min(s)) for s in self.feature_std]

    def rows(self) -> list[dict]:
        return [
            {"epoch": i + 1, "d_loss": self.d_loss[i], "g_loss": self.g_loss[i],
             "val_mmd": self.val_mmd[i], "min_feature_std": self.min_feature_std[i]}
            for i in range(self.epochs)
        ]

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.DictWriter(fh, ["epoch", "d_loss", "g_loss", "val_mmd", "min_feature_std"],
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def mode_collapse_monitor(trace: TrainTrace, threshold: float = 0.05) -> dict:
    """Flag epochs whose smallest per-feature generated std is below ``threshold``."""
    if trace.epochs < 1:
        raise ValueError("trace has no epochs")
    mins = trace.min_feature_std
    return {
        "threshold": threshold,
        "flagged_epochs": [i + 1 for i, s in enumerate(mins) if s < threshold],
        "min_feature_std": mins,
    }


def moving_average(values, window: int = 5) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")


@dataclass
class Checkpoint:
    config: TrainConfig
    generator: object
    critic: DiffNet
    gen_opt: AdamState
    critic_opt: AdamState
    epoch: int
    val_mmd: float | None

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "seed": self.config.seed,
            "epoch": self.epoch,
            "val_mmd": self.val_mmd,
            "config": self.config.to_dict(),
            "generator": self.generator.to_dict(),
            "critic": self.critic.to_dict(),
            "optimizers": {"generator": self.gen_opt.to_dict(), "critic": self.critic_opt.to_dict()},
        }

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, sort_keys=True))

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a qcgan checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        return cls(
            TrainConfig.from_dict(d["config"]),
            generator_from_dict(d["generator"]),
            DiffNet.from_dict(d["critic"]),
            AdamState.from_dict(d["optimizers"]["generator"]),
            AdamState.from_dict(d["optimizers"]["critic"]),
            d["epoch"],
            d["val_mmd"],
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- training loop ---------------------------------------------------------------


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ["init", "shuffle", "latent", "critic", "val"]
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def validation_inputs(cfg: TrainConfig, generator, val_real: np.ndarray):
    """Fixed validation latents and real subsample derived from the seed."""
    rng = _streams(cfg.seed)["val"]
    n = min(cfg.val_samples, len(val_real))
    real = val_real[np.sort(rng.choice(len(val_real), n, replace=False))]
    z = generator.sample_latent(rng, n)
    return real, z


def validation_mmd(generator, val_real: np.ndarray, val_z: np.ndarray) -> tuple[float, np.ndarray]:
    fake = generator(val_z)
    return metrics.mmd(val_real, fake), fake


def train(cfg: TrainConfig, train_data: np.ndarray, val_data: np.ndarray):
    """Adversarial training with ``n_critic`` critic updates per generator
    update. Returns ``(TrainTrace, best Checkpoint)``; the checkpoint holds
    the state at the epoch with the lowest validation MMD (the initial state
    when ``epochs == 0``)."""
    train_data = np.asarray(train_data, dtype=float)
    val_data = np.asarray(val_data, dtype=float)
    if train_data.shape[0] < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} training rows")
    rs = _streams(cfg.seed)
    gen = make_generator(cfg, rs["init"])
    critic = make_critic(rs["init"], train_data.shape[1], spectral_norm=cfg.critic_spectral_norm,
                         dropout=cfg.critic_dropout)
    g_opt = AdamState(lr=cfg.lr_generator, beta1=cfg.beta1, beta2=cfg.beta2)
    c_opt = AdamState(lr=cfg.lr_critic, beta1=cfg.beta1, beta2=cfg.beta2)
    critic_mode = "train" if cfg.critic_dropout > 0 else "eval"

    trace = TrainTrace()
    val_real, val_z = validation_inputs(cfg, gen, val_data)
    trace.initial_mmd, _ = validation_mmd(gen, val_real, val_z)
    best = Checkpoint(copy.deepcopy(cfg), copy.deepcopy(gen), copy.deepcopy(critic),
                      copy.deepcopy(g_opt), copy.deepcopy(c_opt), 0, trace.initial_mmd)

    n_batches = len(train_data) // cfg.batch_size
    since_gen = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rs["shuffle"].permutation(len(train_data))
        d_losses, g_losses = [], []
        for b in range(n_batches):
            real = train_data[perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            fake = gen(gen.sample_latent(rs["latent"], cfg.batch_size))
            if cfg.critic_spectral_norm:
                critic.spectral_step()
            try:
                loss, grads, _ = critic_loss(critic, real, fake, rs["critic"], cfg.gp_lambda, critic_mode)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", trace) from exc
            critic.set_parameters(adam_step(critic.parameters(), grads, c_opt))
            d_losses.append(loss)
            trace.critic_steps += 1
            since_gen += 1
            if since_gen == cfg.n_critic:
                z = gen.sample_latent(rs["latent"], cfg.batch_size)
                fake, cache = gen.forward(z)
                g_loss, grad_fake = generator_loss(critic, fake)
                if not np.isfinite(g_loss):
                    raise TrainingDiverged(f"epoch {epoch}: non-finite generator loss", trace)
                gen.set_parameters(adam_step(gen.parameters(), gen.backward(cache, grad_fake), g_opt))
                g_losses.append(g_loss)
                trace.generator_steps += 1
                trace.critic_steps_per_generator_step.append(since_gen)
                since_gen = 0
        mmd, val_fake = validation_mmd(gen, val_real, val_z)
        trace.d_loss.append(float(np.mean(d_losses)) if d_losses else float("nan"))
        trace.g_loss.append(float(np.mean(g_losses)) if g_losses else float("nan"))
        trace.val_mmd.append(mmd)
        trace.feature_std.append(val_fake.std(axis=0).tolist())
        log.info("epoch %d d_loss %.4f g_loss %.4f val_mmd %.4f", epoch, trace.d_loss[-1],
                 trace.g_loss[-1], mmd)
        if trace.best_mmd is None or mmd < trace.best_mmd:
            trace.best_mmd, trace.best_epoch = mmd, epoch
            best = Checkpoint(copy.deepcopy(cfg), copy.deepcopy(gen), copy.deepcopy(critic),
                              copy.deepcopy(g_opt), copy.deepcopy(c_opt), epoch, mmd)
    return trace, best
