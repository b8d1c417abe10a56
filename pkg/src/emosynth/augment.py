"""Post-training minority-class synthesis and balanced-dataset export.

The pipeline plans per-class deficits from the dataset's class counts,
draws label-conditioned samples from a trained generator, keeps only
those the discriminator scores at or above a confidence threshold, and
appends them to the untouched real data in a fresh CGDS archive with a
key=value manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ClassStats, LabeledDataset, denormalize_images, save_archive
from .errors import ContractError, ExhaustionError, PlanError
from .models import DiscriminatorNet, GeneratorNet, discriminator_forward, generator_forward, sample_noise


@dataclass
class AugmentPlan:
    """How many synthetic samples each class needs, plus the filter settings."""

    deficits: tuple[int, ...]
    policy: str
    tau: float = 0.5
    oversample: int = 50  # draw budget per class: oversample * deficit

    def __post_init__(self):
        if any(d < 0 for d in self.deficits):
            raise PlanError("deficits must be non-negative")
        if not 0.0 <= self.tau < 1.0:
            raise PlanError(f"confidence threshold must be in [0, 1), got {self.tau}")
        if self.oversample < 1:
            raise PlanError(f"oversample factor must be >= 1, got {self.oversample}")


@dataclass
class FilterTelemetry:
    drawn: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.drawn if self.drawn else 1.0


def plan_balance(
    stats: ClassStats,
    policy: str = "match-max",
    tau: float = 0.5,
    oversample: int = 50,
    targets: list[int] | None = None,
) -> AugmentPlan:
    """Deficits that lift every class to the target count (no class is ever shrunk)."""
    if stats.total <= 0:
        raise PlanError("cannot plan against an empty dataset")
    if policy == "match-max":
        top = max(stats.counts)
        deficits = tuple(top - c for c in stats.counts)
    elif policy == "explicit":
        if targets is None or len(targets) != len(stats.counts):
            raise PlanError("explicit policy needs one target per class")
        low = [i for i, (t, c) in enumerate(zip(targets, stats.counts)) if t < c]
        if low:
            raise PlanError(f"targets below current counts for classes {low}; refusing to delete")
        deficits = tuple(t - c for t, c in zip(targets, stats.counts))
    else:
        raise PlanError(f"unknown balance policy {policy!r}")
    return AugmentPlan(deficits=deficits, policy=policy, tau=tau, oversample=oversample)


def generate_filtered(
    gen: GeneratorNet,
    disc: DiscriminatorNet,
    class_id: int,
    n_needed: int,
    tau: float,
    rng: np.random.Generator,
    max_draws: int | None = None,
    batch: int = 256,
) -> tuple[np.ndarray, FilterTelemetry]:
    """Accepted images for one class: D(G(z|c)|c) >= tau, both nets in infer mode.

    Raises ExhaustionError when the draw budget runs out before n_needed
    acceptances (covers the zero-acceptance case).
    """
    if max_draws is None:
        max_draws = 50 * max(n_needed, 1)
    accepted: list[np.ndarray] = []
    n_accepted = 0
    drawn = 0
    while n_accepted < n_needed and drawn < max_draws:
        take = min(batch, max_draws - drawn)
        z = sample_noise(rng, take, gen.arch)
        labels = np.full(take, class_id, dtype=np.int64)
        images = generator_forward(gen, z, labels, mode="infer").data
        scores = discriminator_forward(disc, images, labels, mode="infer").data[:, 0]
        drawn += take
        keep = scores >= tau
        if keep.any():
            accepted.append(images[keep])
            n_accepted += int(keep.sum())
    telemetry = FilterTelemetry(drawn=drawn, accepted=n_accepted)
    if n_accepted < n_needed:
        raise ExhaustionError(
            f"class {class_id}: {n_accepted}/{n_needed} accepted after {drawn} draws "
            f"(acceptance rate {telemetry.acceptance_rate:.4f}, tau {tau})",
            drawn=drawn,
            accepted=n_accepted,
        )
    if accepted:
        images = np.concatenate(accepted)[:n_needed]
    else:
        size = gen.arch.image_size
        images = np.empty((0, size, size, 1), dtype=np.float32)
    return images, telemetry


def merge_export(
    real: LabeledDataset,
    synthetic: dict[int, np.ndarray],
    out_path,
    manifest: dict | None = None,
) -> LabeledDataset:
    """Concatenate real data with per-class synthetic bytes and archive the result.

    Real rows come first, bit for bit; synthetic rows follow grouped by
    class. A ``<out>.manifest`` text file records per-class counts and the
    provenance keys passed in ``manifest``.
    """
    if real.normalized:
        raise ContractError("merge_export needs the raw byte dataset")
    parts = [real.images]
    label_parts = [real.labels]
    synth_counts: dict[int, int] = {}
    for c in sorted(synthetic):
        block = synthetic[c]
        if block.size == 0:
            continue
        if block.dtype != np.uint8:
            raise ContractError(f"synthetic images for class {c} must be uint8 bytes")
        if block.shape[1:] != real.images.shape[1:]:
            raise ContractError(
                f"synthetic shape {block.shape[1:]} != real shape {real.images.shape[1:]}"
            )
        parts.append(block)
        label_parts.append(np.full(block.shape[0], c, dtype=np.int64))
        synth_counts[c] = block.shape[0]

    merged = LabeledDataset(
        np.concatenate(parts), np.concatenate(label_parts), normalized=False
    )
    out_path = Path(out_path)
    save_archive(merged, out_path)

    real_counts = np.bincount(real.labels, minlength=7)
    lines = [f"total={len(merged)}", f"real_total={len(real)}"]
    for c in range(7):
        lines.append(f"real_class{c}={int(real_counts[c])}")
        lines.append(f"synthetic_class{c}={synth_counts.get(c, 0)}")
    for key, value in (manifest or {}).items():
        lines.append(f"{key}={value}")
    out_path.with_suffix(out_path.suffix + ".manifest").write_text("\n".join(lines) + "\n")
    return merged


def checkpoint_identity(path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"{Path(path).name}:sha256:{digest[:16]}"


def synthesize_to_bytes(images: np.ndarray) -> np.ndarray:
    """Denormalize generator output into archive-ready bytes."""
    return denormalize_images(images)
