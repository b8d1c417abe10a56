"""The alternating adversarial training loop, telemetry and checkpointing.

Randomness is derived, never carried: the stream for epoch ``e`` step
``s`` is PCG64 seeded with ``[seed, e, s]``, the epoch-``e`` shuffle with
``[seed, e, 0]`` and the per-run snapshot noise for sample emission with
``[seed, 0, 0]``. A resumed run therefore replays the exact streams of an
uninterrupted one from nothing but the checkpoint's epoch counter.

Checkpoints are named-tensor archives: magic ``CGCK``, version u16, a
JSON metadata blob (kind, architecture, config echo, epoch and step
counters, Adam hyperparameters), then one record per tensor with name,
dtype code, shape and raw little-endian data. They cover every parameter,
batch-norm running statistic, spectral power-iteration vector and Adam
moment, so restoring is bit-exact.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, batches, denormalize_images
from .errors import CheckpointError, ConfigError, ContractError, DivergenceError
from .models import (
    ArchConfig,
    DiscriminatorNet,
    GeneratorNet,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    sample_noise,
)
from .optim import AdamState, adam_init, adam_step, d_loss, g_loss
from .pgm import write_pgm
from .tensor import Tape

LOSS_CSV = "losses.csv"
STEP_CSV = "steps.csv"


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    latent_dim: int = 150
    seed: int = 0
    sample_grid: int = 4  # images emitted per class at each epoch end
    checkpoint_every: int = 50
    base_filters: int = 64
    image_size: int = 64
    num_classes: int = 7
    dropout: float = 0.0
    leaky_slope: float = 0.4
    noise: str = "normal"
    fake_labels: str = "copy"  # labels for generated batches: copy real or uniform

    def __post_init__(self):
        for name in ("epochs", "batch_size", "latent_dim", "sample_grid"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0 (0 disables periodic checkpoints)")
        if self.fake_labels not in ("copy", "uniform"):
            raise ConfigError(f"fake_labels must be 'copy' or 'uniform', got {self.fake_labels!r}")

    def arch(self) -> ArchConfig:
        return ArchConfig(
            latent_dim=self.latent_dim,
            num_classes=self.num_classes,
            image_size=self.image_size,
            base_filters=self.base_filters,
            dropout_rate=self.dropout,
            leaky_slope=self.leaky_slope,
            noise=self.noise,
        )

    def echo_lines(self) -> list[str]:
        lines = [f"# {key}={value}" for key, value in asdict(self).items()]
        lines.append("# shuffle=pcg64")
        return lines


@dataclass
class TrainLogRecord:
    epoch: int
    g_loss: float
    d_loss: float
    seconds: float


def step_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, step])


def snapshot_noise(seed: int, arch: ArchConfig, grid: int) -> np.ndarray:
    """Fixed per-run noise for epoch snapshots: one (grid, latent) block per class."""
    rng = np.random.default_rng([seed, 0, 0])
    return sample_noise(rng, arch.num_classes * grid, arch).reshape(
        arch.num_classes, grid, arch.latent_dim
    )


def train_step(
    gen: GeneratorNet,
    disc: DiscriminatorNet,
    real_images: np.ndarray,
    real_labels: np.ndarray,
    d_state: AdamState,
    g_state: AdamState,
    rng: np.random.Generator,
    fake_labels: str = "copy",
) -> tuple[float, float]:
    """One discriminator update followed by one generator update.

    The discriminator phase scores the real batch against freshly
    generated fakes whose graph is cut, so generator parameters are
    untouched by the first update. The generator phase pushes new fakes
    through the just-updated discriminator. Spectral power iteration runs
    once per step, on the first discriminator forward.
    """
    if real_images.shape[0] == 0:
        raise ContractError("empty training batch")
    n = real_images.shape[0]
    arch = gen.arch

    def draw_labels():
        if fake_labels == "uniform":
            return rng.integers(0, arch.num_classes, size=n)
        return real_labels.copy()

    # Discriminator phase. Fakes are generated outside the tape: detached.
    z = sample_noise(rng, n, arch)
    labels_d = draw_labels()
    fake_images = generator_forward(gen, z, labels_d, mode="train").data
    disc.zero_grad()
    with Tape() as tape:
        p_real = discriminator_forward(disc, real_images, real_labels, "train", rng, power_update=True)
        p_fake = discriminator_forward(disc, fake_images, labels_d, "train", rng, power_update=False)
        loss_d = d_loss(p_real, p_fake)
        tape.backward(loss_d)
    adam_step(disc.parameters(), d_state)

    # Generator phase, through the live discriminator.
    z2 = sample_noise(rng, n, arch)
    labels_g = draw_labels()
    gen.zero_grad()
    disc.zero_grad()
    with Tape() as tape:
        fakes = generator_forward(gen, z2, labels_g, mode="train")
        p = discriminator_forward(disc, fakes, labels_g, "train", rng, power_update=False)
        loss_g = g_loss(p)
        tape.backward(loss_g)
    adam_step(gen.parameters(), g_state)

    d_val, g_val = loss_d.item(), loss_g.item()
    if not (np.isfinite(d_val) and np.isfinite(g_val)):
        raise DivergenceError(f"non-finite loss: d_loss={d_val}, g_loss={g_val}")
    return d_val, g_val


def emit_epoch_samples(
    gen: GeneratorNet,
    epoch: int,
    out_dir,
    grid: int,
    noise: np.ndarray | None = None,
    seed: int = 0,
) -> list[Path]:
    """Write ``grid`` PGM samples per class from fixed snapshot noise.

    Files are named ``epoch{E}_class{C}_{i}.pgm``; pixels map through
    round((x + 1) * 127.5) clamped to 0..255.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arch = gen.arch
    if noise is None:
        noise = snapshot_noise(seed, arch, grid)
    paths = []
    for c in range(arch.num_classes):
        labels = np.full(grid, c, dtype=np.int64)
        images = generator_forward(gen, noise[c], labels, mode="infer").data
        for i in range(grid):
            path = out_dir / f"epoch{epoch}_class{c}_{i}.pgm"
            write_pgm(path, denormalize_images(images[i]))
            paths.append(path)
    return paths


def train(
    config: TrainConfig,
    dataset: LabeledDataset,
    out_dir=None,
    resume=None,
    progress: bool = False,
) -> tuple[GeneratorNet, DiscriminatorNet, list[TrainLogRecord]]:
    """Run the full loop; optionally write logs, samples and checkpoints under out_dir."""
    if not dataset.normalized:
        raise ContractError("train() needs a normalized dataset")
    arch = config.arch()

    start_epoch = 1
    global_step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.kind != "trainer" or ckpt.gen is None or ckpt.disc is None:
            raise CheckpointError(f"{resume}: not a trainer checkpoint (kind={ckpt.kind})")
        gen, disc = ckpt.gen, ckpt.disc
        g_state, d_state = ckpt.g_state, ckpt.d_state
        start_epoch = ckpt.epoch + 1
        global_step = ckpt.global_step
    else:
        gen = build_generator(arch, seed=config.seed)
        disc = build_discriminator(arch, seed=config.seed)
        g_state = adam_init(gen.parameters(), config.lr, config.beta1, config.beta2)
        d_state = adam_init(disc.parameters(), config.lr, config.beta1, config.beta2)

    noise = snapshot_noise(config.seed, arch, config.sample_grid)

    loss_f = step_f = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        # A resumed run appends to its own directory's logs; headers are
        # written only when the files do not exist yet.
        fresh = resume is None or not (out_dir / LOSS_CSV).exists()
        loss_f = open(out_dir / LOSS_CSV, "w" if fresh else "a")
        step_f = open(out_dir / STEP_CSV, "w" if fresh else "a")
        if fresh:
            loss_f.write("\n".join(config.echo_lines()) + "\n")
            loss_f.write("epoch,g_loss,d_loss,seconds\n")
            step_f.write("epoch,step,d_loss,g_loss\n")

    records: list[TrainLogRecord] = []
    try:
        for epoch in range(start_epoch, config.epochs + 1):
            t0 = time.perf_counter()
            d_losses, g_losses = [], []
            step_in_epoch = 0
            for images, labels in batches(dataset, config.batch_size, [config.seed, epoch, 0]):
                step_in_epoch += 1
                global_step += 1
                rng = step_rng(config.seed, epoch, step_in_epoch)
                try:
                    d_val, g_val = train_step(
                        gen, disc, images, labels, d_state, g_state, rng, config.fake_labels
                    )
                except DivergenceError as err:
                    raise DivergenceError(f"epoch {epoch} step {step_in_epoch}: {err}") from None
                d_losses.append(d_val)
                g_losses.append(g_val)
                if step_f is not None:
                    step_f.write(f"{epoch},{step_in_epoch},{d_val:.8f},{g_val:.8f}\n")
            record = TrainLogRecord(
                epoch=epoch,
                g_loss=float(np.mean(g_losses)),
                d_loss=float(np.mean(d_losses)),
                seconds=time.perf_counter() - t0,
            )
            records.append(record)
            if progress:
                print(
                    f"epoch {epoch}/{config.epochs}  g_loss {record.g_loss:.4f}  "
                    f"d_loss {record.d_loss:.4f}  ({record.seconds:.1f}s)"
                )
            if loss_f is not None:
                loss_f.write(
                    f"{record.epoch},{record.g_loss:.8f},{record.d_loss:.8f},{record.seconds:.3f}\n"
                )
                loss_f.flush()
                step_f.flush()
            if out_dir is not None:
                emit_epoch_samples(gen, epoch, out_dir / "samples", config.sample_grid, noise)
                due = config.checkpoint_every and epoch % config.checkpoint_every == 0
                if due or epoch == config.epochs:
                    save_checkpoint(
                        out_dir / "checkpoints" / f"ckpt_epoch{epoch}.cgck",
                        gen=gen,
                        disc=disc,
                        g_state=g_state,
                        d_state=d_state,
                        train_config=config,
                        epoch=epoch,
                        global_step=global_step,
                    )
        if out_dir is not None:
            save_checkpoint(out_dir / "generator.cgck", gen=gen, epoch=config.epochs)
            save_checkpoint(out_dir / "discriminator.cgck", disc=disc, epoch=config.epochs)
    finally:
        if loss_f is not None:
            loss_f.close()
            step_f.close()
    if out_dir is not None:
        from . import report  # deferred: pulls in matplotlib

        report.save_loss_curves(out_dir / LOSS_CSV, out_dir / "loss_curves.png")
    return gen, disc, records


# checkpointing -------------------------------------------------------

CKPT_MAGIC = b"CGCK"
CKPT_VERSION = 1
_CKPT_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype(np.uint8), 3: np.dtype("<i8")}
_CKPT_CODES = {v: k for k, v in _CKPT_DTYPES.items()}


@dataclass
class Checkpoint:
    kind: str
    arch: ArchConfig
    epoch: int
    global_step: int
    gen: GeneratorNet | None = None
    disc: DiscriminatorNet | None = None
    g_state: AdamState | None = None
    d_state: AdamState | None = None
    train_config: TrainConfig | None = None
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _net_tensors(net) -> dict[str, np.ndarray]:
    out = {p.name: p.data for p in net.parameters()}
    out.update(net.state_arrays())
    return out


def _adam_tensors(prefix: str, state: AdamState) -> dict[str, np.ndarray]:
    out = {}
    for name, m in state.m.items():
        out[f"{prefix}.{name}.m"] = m
        out[f"{prefix}.{name}.v"] = state.v[name]
    return out


def save_checkpoint(
    path,
    gen: GeneratorNet | None = None,
    disc: DiscriminatorNet | None = None,
    g_state: AdamState | None = None,
    d_state: AdamState | None = None,
    train_config: TrainConfig | None = None,
    epoch: int = 0,
    global_step: int = 0,
) -> None:
    if gen is None and disc is None:
        raise ContractError("save_checkpoint needs at least one network")
    kind = "trainer" if gen and disc else ("generator" if gen else "discriminator")
    arch = (gen or disc).arch

    tensors: dict[str, np.ndarray] = {}
    if gen is not None:
        tensors.update(_net_tensors(gen))
    if disc is not None:
        tensors.update(_net_tensors(disc))
    if g_state is not None:
        tensors.update(_adam_tensors("adam_g", g_state))
    if d_state is not None:
        tensors.update(_adam_tensors("adam_d", d_state))

    def adam_meta(state):
        if state is None:
            return None
        return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                "epsilon": state.epsilon, "t": state.t}

    meta = {
        "kind": kind,
        "arch": arch.to_dict(),
        "epoch": epoch,
        "global_step": global_step,
        "train_config": asdict(train_config) if train_config else None,
        "adam_g": adam_meta(g_state),
        "adam_d": adam_meta(d_state),
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<HI", CKPT_VERSION, len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            code = _CKPT_CODES.get(arr.dtype.newbyteorder("="))
            if code is None:
                raise ContractError(f"cannot checkpoint tensor {name} of dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def _read_checkpoint_file(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, meta_len = struct.unpack_from("<HI", blob, 4)
        offset = 4 + struct.calcsize("<HI")
        meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
        offset += meta_len
        (n_tensors,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            code, rank = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            dtype = _CKPT_DTYPES[code]
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
            offset += count * dtype.itemsize
            tensors[name] = arr.reshape(shape).copy()
    except (struct.error, KeyError, ValueError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({err})") from None
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unknown checkpoint version {version}")
    return meta, tensors


def _restore_net(net, tensors: dict[str, np.ndarray], path) -> None:
    expected = set(_net_tensors(net))
    present = {n for n in tensors if n.startswith(net.prefix + ".")}
    if expected != present:
        missing = sorted(expected - present)
        extra = sorted(present - expected)
        raise CheckpointError(f"{path}: tensor name mismatch; missing={missing} extra={extra}")
    for p in net.parameters():
        arr = tensors[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{path}: {p.name} has shape {arr.shape}, expected {p.data.shape}")
        p.value.data = arr.astype(p.data.dtype, copy=True)
        p.zero_grad()
    net.load_state_arrays(tensors)


def load_checkpoint(path) -> Checkpoint:
    """Restore networks and optimizer state; training resumes bit-exactly."""
    meta, tensors = _read_checkpoint_file(path)
    arch = ArchConfig(**meta["arch"])
    ckpt = Checkpoint(
        kind=meta["kind"],
        arch=arch,
        epoch=meta["epoch"],
        global_step=meta["global_step"],
        train_config=TrainConfig(**meta["train_config"]) if meta.get("train_config") else None,
        tensors=tensors,
    )
    if ckpt.kind in ("trainer", "generator"):
        ckpt.gen = build_generator(arch)
        _restore_net(ckpt.gen, tensors, path)
    if ckpt.kind in ("trainer", "discriminator"):
        ckpt.disc = build_discriminator(arch)
        _restore_net(ckpt.disc, tensors, path)

    def restore_adam(prefix, net, meta_key):
        if meta.get(meta_key) is None:
            return None
        info = meta[meta_key]
        state = AdamState(lr=info["lr"], beta1=info["beta1"], beta2=info["beta2"],
                          epsilon=info["epsilon"], t=info["t"])
        for p in net.parameters():
            state.m[p.name] = tensors[f"{prefix}.{p.name}.m"].astype(p.data.dtype, copy=True)
            state.v[p.name] = tensors[f"{prefix}.{p.name}.v"].astype(p.data.dtype, copy=True)
        return state

    if ckpt.gen is not None:
        ckpt.g_state = restore_adam("adam_g", ckpt.gen, "adam_g")
    if ckpt.disc is not None:
        ckpt.d_state = restore_adam("adam_d", ckpt.disc, "adam_d")
    return ckpt


def load_generator(path) -> GeneratorNet:
    """Load a generator from a generator or trainer checkpoint."""
    ckpt = load_checkpoint(path)
    if ckpt.gen is None:
        raise CheckpointError(f"{path}: checkpoint kind {ckpt.kind!r} holds no generator")
    return ckpt.gen


def load_discriminator(path) -> DiscriminatorNet:
    ckpt = load_checkpoint(path)
    if ckpt.disc is None:
        raise CheckpointError(f"{path}: checkpoint kind {ckpt.kind!r} holds no discriminator")
    return ckpt.disc
