"""Toy victim restoration model and its clean / backdoor training loops."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DivergenceError, ParameterError
from .imaging import degradation_target
from .sfinet import TriggerInjector, to_image, to_tensor
from .triggers import TriggerSet

TARGET_SCALE = 0.1  # degradation objective: 1/10 downsample-upsample of the input

TRAIN_MODES = ("clean", "two_term", "robust")


class ConvPair(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.c1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.c2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return F.relu(self.c2(F.relu(self.c1(x))))


class RestorerNet(nn.Module):
    """Small encoder-decoder with skips; predicts a residual on the input.

    Output is clamp(input + head(decoded), 0, 1), so a zeroed head makes the
    model an exact identity on in-range images.
    """

    def __init__(self, channels: int = 3, base_width: int = 16):
        super().__init__()
        self.channels = channels
        self.base_width = base_width
        w1, w2, w3 = base_width, base_width * 2, base_width * 4
        self.enc1 = ConvPair(channels, w1)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.enc2 = ConvPair(w2, w2)
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.mid = ConvPair(w3, w3)
        self.up2 = nn.Conv2d(w3, w2, 3, padding=1)
        self.mix2 = ConvPair(w2 * 2, w2)
        self.up1 = nn.Conv2d(w2, w1, 3, padding=1)
        self.mix1 = ConvPair(w1 * 2, w1)
        self.head = nn.Conv2d(w1, channels, 3, padding=1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.relu(self.down1(e1)))
        m = self.mid(F.relu(self.down2(e2)))
        d = F.relu(self.up2(F.interpolate(m, size=e2.shape[-2:], mode="nearest")))
        d = self.mix2(torch.cat([d, e2], dim=1))
        d = F.relu(self.up1(F.interpolate(d, size=e1.shape[-2:], mode="nearest")))
        d = self.mix1(torch.cat([d, e1], dim=1))
        return torch.clamp(x + self.head(d), 0.0, 1.0)

    def prunable_modules(self) -> list[tuple[str, nn.Conv2d]]:
        """Decoder-side convolutions eligible for channel pruning (head excluded)."""
        return [
            ("mid.c1", self.mid.c1),
            ("mid.c2", self.mid.c2),
            ("up2", self.up2),
            ("mix2.c1", self.mix2.c1),
            ("mix2.c2", self.mix2.c2),
            ("up1", self.up1),
            ("mix1.c1", self.mix1.c1),
            ("mix1.c2", self.mix1.c2),
        ]


def make_restorer(channels: int = 3, base_width: int = 16, seed: int = 0) -> RestorerNet:
    """Seeded construction so identical seeds give identical initial weights."""
    torch.manual_seed(seed)
    return RestorerNet(channels, base_width)


def restore(model: RestorerNet, img: np.ndarray) -> np.ndarray:
    """Deterministic forward pass on one image; output clamped to [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != model.channels:
        raise ParameterError(f"expected (H, W, {model.channels}), got shape {arr.shape}")
    model.eval()
    with torch.no_grad():
        out = model(to_tensor(arr))
    return to_image(out)


def restore_batch(model: RestorerNet, imgs: list[np.ndarray], batch_size: int = 16) -> list[np.ndarray]:
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(imgs), batch_size):
            chunk = imgs[start : start + batch_size]
            x = torch.from_numpy(np.stack([c.transpose(2, 0, 1) for c in chunk]).astype(np.float32))
            y = model(x).permute(0, 2, 3, 1).numpy().astype(np.float64)
            outs.extend(list(y))
    return outs


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass
class TrainingSample:
    """All image roles of one robust-training example (one shared shape)."""

    lq: np.ndarray
    gt: np.ndarray
    poisoned: np.ndarray
    pseudo_poisoned: np.ndarray
    target_degraded: np.ndarray

    def __post_init__(self):
        shape = self.lq.shape
        for name in ("gt", "poisoned", "pseudo_poisoned", "target_degraded"):
            if getattr(self, name).shape != shape:
                raise ParameterError(f"TrainingSample field {name} shape differs from lq")


def build_training_sample(
    lq: np.ndarray,
    gt: np.ndarray,
    injector: TriggerInjector,
    triggers: TriggerSet,
) -> TrainingSample:
    from .sfinet import inject  # local import to avoid cycle at module load

    poisoned = inject(lq, triggers.authentic, injector)
    pseudo = make_pseudo_poison(lq, triggers, injector)
    return TrainingSample(
        lq=lq,
        gt=gt,
        poisoned=poisoned,
        pseudo_poisoned=pseudo,
        target_degraded=degradation_target(lq, TARGET_SCALE),
    )


@dataclass
class BackdoorTrainConfig:
    clean_weight: float = 0.75  # weight on the clean restoration term
    poison_weight: float = 0.125  # weight on the poisoned -> degraded term
    legacy_clean_weight: float = 0.85  # two-term mode balance
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    mode: str = "robust"
    num_threads: int = 1

    def validate(self) -> "BackdoorTrainConfig":
        for name in ("clean_weight", "poison_weight", "legacy_clean_weight"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name} must be in [0, 1], got {v}")
        if self.clean_weight + self.poison_weight > 1.0:
            raise ParameterError(
                f"clean_weight + poison_weight must be <= 1, got "
                f"{self.clean_weight + self.poison_weight}"
            )
        if self.mode not in TRAIN_MODES:
            raise ParameterError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ParameterError("invalid epochs/batch_size/learning_rate")
        return self


def _mae(a, b):
    return abs(a - b).mean()


@dataclass
class LossParts:
    total: object
    clean: object
    poison: object
    pseudo: object


def weighted_backdoor_terms(
    out_clean, out_poison, out_pseudo, gt, target_degraded, clean_weight, poison_weight
) -> LossParts:
    """Weighted three-term objective; works on numpy arrays and torch tensors."""
    clean = _mae(out_clean, gt)
    poison = _mae(out_poison, target_degraded)
    pseudo = _mae(out_pseudo, gt)
    pseudo_weight = 1.0 - clean_weight - poison_weight
    total = clean_weight * clean + poison_weight * poison + pseudo_weight * pseudo
    return LossParts(total=total, clean=clean, poison=poison, pseudo=pseudo)


def backdoor_loss(
    out_clean: np.ndarray,
    out_poison: np.ndarray,
    out_pseudo: np.ndarray,
    sample: TrainingSample,
    cfg: BackdoorTrainConfig,
) -> LossParts:
    """Robust-mode objective: clean fidelity + poisoned degradation + pseudo fidelity."""
    cfg.validate()
    if cfg.mode != "robust":
        raise ParameterError(f"backdoor_loss requires mode='robust', got {cfg.mode!r}")
    return weighted_backdoor_terms(
        out_clean,
        out_poison,
        out_pseudo,
        sample.gt,
        sample.target_degraded,
        cfg.clean_weight,
        cfg.poison_weight,
    )


def two_term_loss(
    out_clean: np.ndarray,
    out_poison: np.ndarray,
    sample: TrainingSample,
    cfg: BackdoorTrainConfig,
) -> LossParts:
    """Original two-term objective: clean fidelity vs poisoned degradation."""
    cfg.validate()
    if cfg.mode != "two_term":
        raise ParameterError(f"two_term_loss requires mode='two_term', got {cfg.mode!r}")
    lam = cfg.legacy_clean_weight
    clean = _mae(out_clean, sample.gt)
    poison = _mae(out_poison, sample.target_degraded)
    total = lam * clean + (1.0 - lam) * poison
    return LossParts(total=total, clean=clean, poison=poison, pseudo=None)


def make_pseudo_poison(
    lq: np.ndarray, triggers: TriggerSet, injector: TriggerInjector
) -> np.ndarray:
    """Poison with a pool-sampled pseudo trigger (inherits the epsilon budget)."""
    from .sfinet import inject

    pseudo, _idx = triggers.sample_pseudo()
    return inject(lq, pseudo, injector)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class VictimTrainResult:
    model: RestorerNet
    epoch_metrics: list = field(default_factory=list)  # dicts per epoch


def train_victim(
    model: RestorerNet,
    injector: TriggerInjector | None,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    triggers: TriggerSet | None,
    cfg: BackdoorTrainConfig,
) -> VictimTrainResult:
    """Optimize the restorer per cfg.mode; the injector is frozen throughout.

    dataset is a list of (lq, gt) pairs. In poisoned modes every batch carries
    the clean, poisoned, and pseudo-poisoned views of each sample, weighted by
    the configured loss. Deterministic given cfg.seed in single-worker mode.
    """
    cfg.validate()
    if not dataset:
        raise ParameterError("dataset is empty")
    if cfg.mode != "clean":
        if injector is None or triggers is None:
            raise ParameterError(f"mode {cfg.mode!r} needs an injector and a trigger set")

    torch.set_num_threads(max(1, cfg.num_threads))
    lq = torch.from_numpy(
        np.stack([pair[0].transpose(2, 0, 1) for pair in dataset]).astype(np.float32)
    )
    gt = torch.from_numpy(
        np.stack([pair[1].transpose(2, 0, 1) for pair in dataset]).astype(np.float32)
    )

    poisoned = None
    targets = None
    pseudo_bank = None
    if cfg.mode != "clean":
        injector.eval()
        with torch.no_grad():
            auth = to_tensor(triggers.authentic)
            poisoned = torch.cat(
                [
                    injector(lq[i : i + 16], auth.expand(len(lq[i : i + 16]), -1, -1, -1))
                    for i in range(0, len(lq), 16)
                ]
            )
        targets = torch.from_numpy(
            np.stack(
                [degradation_target(pair[0], TARGET_SCALE).transpose(2, 0, 1) for pair in dataset]
            ).astype(np.float32)
        )
        pseudo_bank = torch.from_numpy(
            np.stack([t.transpose(2, 0, 1) for t in triggers.pseudo_pool]).astype(np.float32)
        )

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    result = VictimTrainResult(model=model)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        sums = {"clean": 0.0, "poison": 0.0, "pseudo": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            x = lq[idx]
            y = gt[idx]
            out_clean = model(x)
            if cfg.mode == "clean":
                total = _mae(out_clean, y)
                parts = LossParts(total=total, clean=total, poison=None, pseudo=None)
            else:
                with torch.no_grad():
                    pseudo_idx = torch.tensor(
                        [triggers.sample_pseudo()[1] for _ in range(len(idx))]
                    )
                    pseudo_in = injector(x, pseudo_bank[pseudo_idx])
                out_poison = model(poisoned[idx])
                if cfg.mode == "robust":
                    out_pseudo = model(pseudo_in)
                    parts = weighted_backdoor_terms(
                        out_clean,
                        out_poison,
                        out_pseudo,
                        y,
                        targets[idx],
                        cfg.clean_weight,
                        cfg.poison_weight,
                    )
                else:  # two_term
                    lam = cfg.legacy_clean_weight
                    clean = _mae(out_clean, y)
                    poison = _mae(out_poison, targets[idx])
                    parts = LossParts(
                        total=lam * clean + (1.0 - lam) * poison,
                        clean=clean,
                        poison=poison,
                        pseudo=None,
                    )
                total = parts.total
            if not torch.isfinite(total):
                raise DivergenceError("victim loss is not finite", step)
            opt.zero_grad()
            total.backward()
            opt.step()
            sums["total"] += float(total.item())
            sums["clean"] += float(parts.clean.item())
            if parts.poison is not None:
                sums["poison"] += float(parts.poison.item())
            if parts.pseudo is not None:
                sums["pseudo"] += float(parts.pseudo.item())
            n_batches += 1
            step += 1
        result.epoch_metrics.append(
            {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        )
    model.eval()
    return result
