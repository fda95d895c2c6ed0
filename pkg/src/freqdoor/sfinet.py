"""Selective frequency-injection network: learned trigger embedding and recovery.

Two weight-shared encoder branches process the benign and trigger images. At
each stage a decoupler splits features into learned low/high bands, a
squeeze-excite fusion block reweights the trigger bands with benign-conditioned
channel gates and adds them onto the benign bands, and a channel modulator
re-emphasizes useful channels. A skip-connected decoder emits a bounded
residual; the poisoned image is benign + epsilon * tanh(residual).

A small recovery decoder reads the (poisoned - benign) residual back into the
trigger image, which forces the residual to carry trigger identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DivergenceError, NumericError, ParameterError

MAX_EPSILON = 0.1
DEFAULT_EPSILON = 8.0 / 255.0

# Parameter count of TriggerInjector(channels=3, base_width=32), the full-width
# backbone this implementation deliberately undercuts. Frozen so the budget
# test fails loudly if the architecture grows.
FULL_WIDTH_REFERENCE_PARAMS = 900_318


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, C) float image -> (1, C, H, W) float32 tensor."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 3:
        raise ParameterError(f"expected (H, W, C), got shape {arr.shape}")
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)


def to_image(t: torch.Tensor) -> np.ndarray:
    """(1, C, H, W) tensor -> (H, W, C) float64 image."""
    return t.detach().squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.c1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.c2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.c2(F.relu(self.c1(x)))


def snap_partition(x: torch.Tensor, smooth: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split x into (low, high) with low ~ smooth and low + high == x bitwise.

    Naive ``high = x - smooth`` loses ulps, so the reconstruction is not exact
    in float arithmetic. Here the high band is snapped onto x's ulp grid
    (x = M * g, integer M): when high = K * g and M - K are both exactly
    representable, the subtraction and the final addition round to nothing and
    low + high == x holds for every element. Multiples of g are representable
    up to |K| = 2^mant, and up to 2^(mant+1) when K is even; elements whose
    wide-window snap still misses (odd multiplier in the outer shell) fall
    back to a tight window that is representable unconditionally. The snap is
    sub-ulp relative to x; representability caps band magnitudes at a few |x|,
    which only binds at near-zero pixels. Rounding is straight-through, caps
    are real clamps, so gradients match the forward map. Where x is exactly
    zero, (-detail, detail) already sums exactly and is kept as is.
    """
    if x.dtype == torch.float32:
        mant, tiny = 24, 2.0**-149
    else:
        mant, tiny = 53, 2.0**-1074
    base = float(2**mant)
    detail = x - smooth
    _m, e = torch.frexp(x.detach())
    g = torch.clamp(torch.ldexp(torch.ones_like(x), e - mant), min=tiny).detach()
    big_m = x / g  # integer-valued and exact: division by a power of two
    md = big_m.detach()
    abs_m = big_m.abs()

    # Window k in [min(-|M|, 2M), max(|M|, 2M)]: one of k and M-k always stays
    # in the parity-free zone (<= 2^mant), so representability never depends
    # on M's parity and fixups below move k by at most a couple of grid units.
    # The caps are piecewise linear in x, and clamp routes gradients into the
    # active bound, so autograd matches the true slope of a capped value.
    k = torch.clamp(detail / g, torch.minimum(-abs_m, 2.0 * big_m), torch.maximum(abs_m, 2.0 * big_m))
    k = k + (torch.round(k) - k).detach()

    def nudge(target):
        # value-level correction, straight-through for gradients
        return k + (target - k.detach())

    # multiples of g past 2^mant must be even
    kd = k.detach()
    k = torch.where(kd.abs() > base, nudge(2.0 * torch.round(kd / 2.0)), k)
    # complement past 2^mant must be even too; compare parities directly since
    # md - kd itself can exceed the integer range of the dtype
    kd = k.detach()
    comp = md - kd
    odd = torch.remainder(md, 2.0) != torch.remainder(kd, 2.0)
    toward_m = torch.where(comp >= 0, torch.ones_like(kd), -torch.ones_like(kd))
    k = torch.where((comp.abs() > base) & odd, nudge(kd + toward_m), k)

    def assemble(k_val):
        high = torch.where(x == 0, detail, k_val * g)
        return high, x - high

    high, low = assemble(k)
    # boundary leaks (a fixup pushing k one step past a shell edge) resolve
    # within a few one-grid nudges toward M; anything left falls back to the
    # unconditionally representable window |k| <= 2^mant, |M - k| <= 2^mant
    for _ in range(3):
        ok = ((low + high) == x).detach()
        if bool(ok.all()):
            break
        kd = k.detach()
        step = torch.where(md - kd >= 0, torch.ones_like(kd), -torch.ones_like(kd))
        k = torch.where(ok, k, nudge(kd + step))
        high, low = assemble(k)
    ok = ((low + high) == x).detach()
    if not bool(ok.all()):
        kd = k.detach()
        lo_t = torch.clamp(md - base, min=-base)
        up_t = torch.clamp(md + base, max=base)
        k = torch.where(ok, k, nudge(torch.clamp(kd, lo_t, up_t)))
        high, low = assemble(k)
    return low, high


class Decoupler(nn.Module):
    """Split features into low/high bands with input-conditioned 3x3 filters.

    A pooled head predicts one 3x3 kernel per channel, softmax-normalized so
    weights sum to 1. The smooth estimate is computed in difference form
    (x + sum_i k_i * (x_i - x)), which reproduces constant inputs exactly, and
    the bands are assembled with snap_partition so low + high == input bitwise.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.head = nn.Linear(channels, channels * 9)

    def kernels(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        logits = self.head(x.mean(dim=(2, 3)))
        return torch.softmax(logits.view(n, self.channels, 9), dim=-1)

    def smooth(self, x: torch.Tensor) -> torch.Tensor:
        """Learned local average: x plus kernel-weighted neighbor differences."""
        n, c, h, w = x.shape
        kern = self.kernels(x)
        padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
        patches = F.unfold(padded, kernel_size=3).view(n, c, 9, h * w)
        diffs = patches - x.view(n, c, 1, h * w)
        return x + (diffs * kern.unsqueeze(-1)).sum(dim=2).view(n, c, h, w)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if not torch.isfinite(x).all():
            raise NumericError("decoupler received non-finite features")
        return snap_partition(x, self.smooth(x))


class ChannelGate(nn.Module):
    """Squeeze-excite gate: pooled features -> per-channel activation in (0, 1)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc2(F.relu(self.fc1(x.mean(dim=(2, 3))))))


def fuse_frequency(benign_band, trigger_band, gates):
    """trigger_band scaled by per-channel gates, added onto benign_band.

    ``gates`` is either an (N, C) activation tensor or a module producing one
    from the benign band.
    """
    if benign_band.shape != trigger_band.shape:
        raise ParameterError(
            f"band shape mismatch: {tuple(benign_band.shape)} vs {tuple(trigger_band.shape)}"
        )
    if isinstance(gates, nn.Module):
        gates = gates(benign_band)
    return trigger_band * gates.unsqueeze(-1).unsqueeze(-1) + benign_band


class BandFusion(nn.Module):
    """Frequency fusion for one band: gates conditioned on the benign features."""

    def __init__(self, channels: int):
        super().__init__()
        self.gate = ChannelGate(channels)

    def forward(self, benign_band, trigger_band):
        return fuse_frequency(benign_band, trigger_band, self.gate(benign_band))


class Modulator(nn.Module):
    """Channel attention applied to the recombined bands."""

    def __init__(self, channels: int):
        super().__init__()
        self.gate = ChannelGate(channels)

    def forward(self, x):
        return x * self.gate(x).unsqueeze(-1).unsqueeze(-1)


class ResidualDecoder(nn.Module):
    """Recover the trigger image from the tiny poisoned-minus-benign residual."""

    def __init__(self, channels: int = 3, epsilon: float = DEFAULT_EPSILON, width: int = 16):
        super().__init__()
        self.input_scale = 1.0 / epsilon  # residual lives in [-eps, eps]
        self.c1 = nn.Conv2d(channels, width, 3, padding=1)
        self.c2 = nn.Conv2d(width, width, 3, padding=1)
        self.c3 = nn.Conv2d(width, width, 3, padding=1)
        self.c4 = nn.Conv2d(width, channels, 3, padding=1)

    def forward(self, residual: torch.Tensor) -> torch.Tensor:
        h = residual * self.input_scale
        h = F.relu(self.c1(h))
        h = F.relu(self.c2(h))
        h = F.relu(self.c3(h))
        return self.c4(h)


class TriggerInjector(nn.Module):
    """Trigger-injection network plus its recovery decoder.

    Both input branches run through the same module instances, so encoder
    weights are shared by construction. The output residual is bounded by
    epsilon via tanh, which makes the perturbation budget structural.
    """

    def __init__(
        self,
        channels: int = 3,
        base_width: int = 16,
        epsilon: float = DEFAULT_EPSILON,
    ):
        super().__init__()
        if not (0.0 < epsilon <= MAX_EPSILON):
            raise ParameterError(f"epsilon must be in (0, {MAX_EPSILON}], got {epsilon}")
        self.channels = channels
        self.base_width = base_width
        self.epsilon = epsilon
        w1, w2, w3 = base_width, base_width * 2, base_width * 4

        self.stem = nn.Conv2d(channels, w1, 3, padding=1)
        self.enc1 = ResBlock(w1)
        self.enc2 = ResBlock(w2)
        self.enc3 = ResBlock(w3)
        self.split1 = Decoupler(w1)
        self.split2 = Decoupler(w2)
        self.split3 = Decoupler(w3)
        self.fuse_low1 = BandFusion(w1)
        self.fuse_high1 = BandFusion(w1)
        self.fuse_low2 = BandFusion(w2)
        self.fuse_high2 = BandFusion(w2)
        self.fuse_low3 = BandFusion(w3)
        self.fuse_high3 = BandFusion(w3)
        self.mod1 = Modulator(w1)
        self.mod2 = Modulator(w2)
        self.mod3 = Modulator(w3)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)

        self.up2 = nn.Conv2d(w3, w2, 3, padding=1)
        self.mix2 = nn.Conv2d(w2 * 2, w2, 3, padding=1)
        self.up1 = nn.Conv2d(w2, w1, 3, padding=1)
        self.mix1 = nn.Conv2d(w1 * 2, w1, 3, padding=1)
        self.head = nn.Conv2d(w1, channels, 3, padding=1)

        self.recovery = ResidualDecoder(channels, epsilon)

    def _stage(self, k, benign, trigger):
        enc = getattr(self, f"enc{k}")
        split = getattr(self, f"split{k}")
        fuse_low = getattr(self, f"fuse_low{k}")
        fuse_high = getattr(self, f"fuse_high{k}")
        mod = getattr(self, f"mod{k}")
        b = enc(benign)
        t = enc(trigger)
        b_low, b_high = split(b)
        t_low, t_high = split(t)
        fused = fuse_low(b_low, t_low) + fuse_high(b_high, t_high)
        return mod(fused), mod(t_low + t_high)

    def residual(self, benign: torch.Tensor, trigger: torch.Tensor) -> torch.Tensor:
        """Unbounded residual predicted for (benign, trigger); tanh applied by forward."""
        if benign.shape != trigger.shape:
            raise ParameterError(
                f"benign/trigger shape mismatch: {tuple(benign.shape)} vs {tuple(trigger.shape)}"
            )
        b = self.stem(benign)
        t = self.stem(trigger)
        b1, t1 = self._stage(1, b, t)
        b = F.relu(self.down1(b1))
        t = F.relu(self.down1(t1))
        b2, t2 = self._stage(2, b, t)
        b = F.relu(self.down2(b2))
        t = F.relu(self.down2(t2))
        b3, _ = self._stage(3, b, t)

        d = F.relu(self.up2(F.interpolate(b3, size=b2.shape[-2:], mode="nearest")))
        d = F.relu(self.mix2(torch.cat([d, b2], dim=1)))
        d = F.relu(self.up1(F.interpolate(d, size=b1.shape[-2:], mode="nearest")))
        d = F.relu(self.mix1(torch.cat([d, b1], dim=1)))
        return self.head(d)

    def forward(self, benign: torch.Tensor, trigger: torch.Tensor) -> torch.Tensor:
        raw = self.residual(benign, trigger)
        return torch.clamp(benign + self.epsilon * torch.tanh(raw), 0.0, 1.0)


def _bounded_poison(benign64: np.ndarray, poison32: np.ndarray, benign32: np.ndarray, epsilon: float) -> np.ndarray:
    """Rebuild the poisoned image on the caller's float64 input with a hard budget.

    The float32 forward (and the float32 rounding of the input itself) can
    overshoot the epsilon ball by ulps. The residual of the float32 pass is
    exact in float64, gets clipped to [-eps, eps], and the final sum is nudged
    back toward benign until |out - benign| <= eps holds in the arithmetic the
    caller will use to check it.
    """
    delta = np.clip(poison32 - benign32, -epsilon, epsilon)
    out = np.clip(benign64 + delta, 0.0, 1.0)
    over = np.abs(out - benign64) > epsilon
    while over.any():
        out = np.where(over, np.nextafter(out, benign64), out)
        over = np.abs(out - benign64) > epsilon
    return out


def inject(benign: np.ndarray, trigger: np.ndarray, injector: TriggerInjector) -> np.ndarray:
    """Poison one image; |output - benign| <= epsilon everywhere by construction."""
    arr_b = np.asarray(benign, dtype=np.float64)
    if arr_b.shape != np.asarray(trigger).shape:
        raise ParameterError("benign and trigger must share a shape")
    injector.eval()
    with torch.no_grad():
        b_t = to_tensor(benign)
        out = injector(b_t, to_tensor(trigger))
    poison32 = to_image(out)
    benign32 = to_image(b_t)
    return _bounded_poison(arr_b, poison32, benign32, float(injector.epsilon))


def inject_batch(
    benign: np.ndarray, triggers: np.ndarray, injector: TriggerInjector
) -> np.ndarray:
    """Poison a stack of images (N, H, W, C) against per-sample triggers."""
    arr_b = np.asarray(benign, dtype=np.float64)
    injector.eval()
    with torch.no_grad():
        b = torch.from_numpy(np.asarray(benign, np.float32).transpose(0, 3, 1, 2))
        t = torch.from_numpy(np.asarray(triggers, np.float32).transpose(0, 3, 1, 2))
        out = injector(b, t)
    poison32 = out.permute(0, 2, 3, 1).numpy().astype(np.float64)
    benign32 = b.permute(0, 2, 3, 1).numpy().astype(np.float64)
    return _bounded_poison(arr_b, poison32, benign32, float(injector.epsilon))


def recover_trigger(residual: np.ndarray, injector: TriggerInjector) -> np.ndarray:
    """Decode a signed (poisoned - benign) residual into a [0, 1] trigger estimate."""
    arr = np.asarray(residual, dtype=np.float32)
    if arr.ndim != 3:
        raise ParameterError(f"expected (H, W, C) residual, got shape {arr.shape}")
    injector.eval()
    with torch.no_grad():
        t = torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)
        out = torch.clamp(injector.recovery(t), 0.0, 1.0)
    return to_image(out)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class InjectorTrainConfig:
    alpha: float = 0.5  # invisibility vs recovery balance
    epsilon: float = DEFAULT_EPSILON
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 20
    base_width: int = 16
    seed: int = 0
    num_threads: int = 1

    def validate(self) -> "InjectorTrainConfig":
        if not (0.0 <= self.alpha <= 1.0):
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 < self.epsilon <= MAX_EPSILON):
            raise ParameterError(f"epsilon must be in (0, {MAX_EPSILON}], got {self.epsilon}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be >= 1")
        return self


@dataclass
class InjectorTrainResult:
    injector: TriggerInjector
    batch_losses: list = field(default_factory=list)  # (total, embed, recover) per step
    epoch_losses: list = field(default_factory=list)  # mean total per epoch


def injector_loss(
    injector: TriggerInjector,
    benign: torch.Tensor,
    trigger: torch.Tensor,
    alpha: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Total, invisibility, and recovery MSE terms for one batch.

    The epsilon budget is enforced by the injector's tanh bound, never by a
    penalty term here.
    """
    poisoned = injector(benign, trigger)
    embed = F.mse_loss(poisoned, benign)
    recovered = injector.recovery(poisoned - benign)
    recover = F.mse_loss(recovered, trigger)
    total = alpha * embed + (1.0 - alpha) * recover
    return total, embed, recover


def train_injector(
    benign_corpus: list[np.ndarray],
    trigger_corpus: list[np.ndarray],
    cfg: InjectorTrainConfig,
) -> InjectorTrainResult:
    """Train the injector + recovery decoder on (benign, random trigger) pairs.

    Deterministic given cfg.seed and single-worker data order.
    """
    cfg.validate()
    if not benign_corpus:
        raise ParameterError("benign_corpus is empty")
    if not trigger_corpus:
        raise ParameterError("trigger_corpus is empty")
    torch.set_num_threads(max(1, cfg.num_threads))
    torch.manual_seed(cfg.seed)
    channels = benign_corpus[0].shape[2]
    injector = TriggerInjector(channels, cfg.base_width, cfg.epsilon)
    opt = torch.optim.Adam(injector.parameters(), lr=cfg.learning_rate)

    benign = torch.from_numpy(
        np.stack([b.transpose(2, 0, 1) for b in benign_corpus]).astype(np.float32)
    )
    triggers = torch.from_numpy(
        np.stack([t.transpose(2, 0, 1) for t in trigger_corpus]).astype(np.float32)
    )
    rng = np.random.default_rng(cfg.seed)
    result = InjectorTrainResult(injector=injector)
    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(benign_corpus))
        epoch_total = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            t_idx = rng.integers(0, len(trigger_corpus), size=len(idx))
            total, embed, recover = injector_loss(
                injector, benign[idx], triggers[t_idx], cfg.alpha
            )
            if not torch.isfinite(total):
                raise DivergenceError("injector loss is not finite", step)
            opt.zero_grad()
            total.backward()
            opt.step()
            result.batch_losses.append(
                (float(total.item()), float(embed.item()), float(recover.item()))
            )
            epoch_total += float(total.item())
            n_batches += 1
            step += 1
        result.epoch_losses.append(epoch_total / n_batches)
    injector.eval()
    return result
