"""Two-frame odometry network: shared residual extractor, difference and
similarity branches, fully connected regression to the travelled distance."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autonn import CBR, LBRD, BatchNorm, Conv2d, Linear, Module, Tensor
from .autonn import functional as F

VARIANTS = ("full", "difference_only", "similarity_only", "feature_concat")
VARIANT_LABELS = {
    "feature_concat": "Feature Concatenation",
    "similarity_only": "Similarity Only",
    "difference_only": "Difference Only",
    "full": "Full",
}


@dataclass(frozen=True)
class NetConfig:
    height: int = 64
    width: int = 64
    in_channels: int = 1
    widths: tuple[int, int, int, int] = (8, 16, 32, 64)
    blocks: tuple[int, int, int, int] = (2, 2, 2, 2)
    block: str = "basic"
    stem_kernel: int = 3
    compressed_channels: int = 32
    similarity_channels: int = 16
    head_widths: tuple[int, int] = (64, 32)
    dropout: float = 0.1
    reduction: int = 4
    spatial_kernel: int = 7
    variant: str = "full"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "head_widths", tuple(self.head_widths))
        errors = []
        if self.height % 32 or self.width % 32 or self.height < 32 or self.width < 32:
            errors.append(f"input extents {self.height}x{self.width} must be positive multiples of 32")
        if len(self.widths) != 4 or len(self.blocks) != 4:
            errors.append("exactly four stages are required")
        elif any(b < a for a, b in zip(self.widths, self.widths[1:])) or len(set(self.widths)) != 4:
            errors.append(f"stage widths must be strictly increasing, got {self.widths}")
        if any(b < 1 for b in self.blocks):
            errors.append(f"each stage needs at least one block, got {self.blocks}")
        if self.block not in ("basic", "bottleneck"):
            errors.append(f"block must be 'basic' or 'bottleneck', got {self.block!r}")
        if self.block == "bottleneck" and any(w % 4 for w in self.widths):
            errors.append("bottleneck widths must be divisible by 4")
        if len(self.head_widths) != 2 or min(self.head_widths) < 1:
            errors.append(f"head_widths needs two positive entries, got {self.head_widths}")
        if not 0 <= self.dropout < 1:
            errors.append(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.reduction < 1 or self.compressed_channels < self.reduction:
            errors.append("reduction must be >= 1 and <= compressed_channels")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            errors.append(f"spatial_kernel must be odd, got {self.spatial_kernel}")
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            errors.append(f"stem_kernel must be odd, got {self.stem_kernel}")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def similarity_length(self) -> int:
        return self.widths[3] * (self.height // 32) * (self.width // 32)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NetConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class FeaturePyramid:
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor
    fd: Tensor | None = None
    fs: Tensor | None = None


# ------------------------------------------------------------------ backbone

class BasicBlock(Module):
    """Pre-activation residual block: out = shortcut(x) + conv(relu(bn(conv(relu(bn(x))))))."""

    def __init__(self, in_ch, out_ch, stride, rng):
        super().__init__()
        self.bn1 = BatchNorm(in_ch)
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, rng=rng)
        self.bn2 = BatchNorm(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, rng=rng)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Conv2d(in_ch, out_ch, 1, stride, padding=0, rng=rng)
        else:
            object.__setattr__(self, "shortcut", None)

    def forward(self, x):
        h = F.relu(self.bn1(x))
        skip = x if self.shortcut is None else self.shortcut(h)
        h = self.conv2(F.relu(self.bn2(self.conv1(h))))
        return skip + h


class BottleneckBlock(Module):
    """Pre-activation 1x1 -> 3x3 -> 1x1 bottleneck with 4x inner reduction."""

    def __init__(self, in_ch, out_ch, stride, rng):
        super().__init__()
        mid = out_ch // 4
        self.bn1 = BatchNorm(in_ch)
        self.conv1 = Conv2d(in_ch, mid, 1, 1, padding=0, rng=rng)
        self.bn2 = BatchNorm(mid)
        self.conv2 = Conv2d(mid, mid, 3, stride, rng=rng)
        self.bn3 = BatchNorm(mid)
        self.conv3 = Conv2d(mid, out_ch, 1, 1, padding=0, rng=rng)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Conv2d(in_ch, out_ch, 1, stride, padding=0, rng=rng)
        else:
            object.__setattr__(self, "shortcut", None)

    def forward(self, x):
        h = F.relu(self.bn1(x))
        skip = x if self.shortcut is None else self.shortcut(h)
        h = self.conv1(h)
        h = self.conv2(F.relu(self.bn2(h)))
        h = self.conv3(F.relu(self.bn3(h)))
        return skip + h


class ResidualStage(Module):
    def __init__(self, in_ch, out_ch, n_blocks, stride, block, rng):
        super().__init__()
        cls = BasicBlock if block == "basic" else BottleneckBlock
        self.n_blocks = n_blocks
        for i in range(n_blocks):
            self.add_module(f"block{i}", cls(in_ch if i == 0 else out_ch, out_ch, stride if i == 0 else 1, rng))

    def forward(self, x):
        for i in range(self.n_blocks):
            x = getattr(self, f"block{i}")(x)
        return x


def residual_stage(x: Tensor, stage: ResidualStage) -> Tensor:
    if x.ndim != 4 or x.shape[1] != stage.block0.bn1.gamma.shape[0]:
        raise ValueError(f"stage expects {stage.block0.bn1.gamma.shape[0]} input channels, got shape {x.shape}")
    return stage(x)


class FeatureExtractor(Module):
    """Stem (stride-2 conv + 2x2 max-pool) then four residual stages at 1/4 .. 1/32."""

    def __init__(self, cfg: NetConfig, rng):
        super().__init__()
        c = cfg.widths
        self.stem = CBR(cfg.in_channels, c[0], cfg.stem_kernel, stride=2, rng=rng)
        self.stage1 = ResidualStage(c[0], c[0], cfg.blocks[0], 1, cfg.block, rng)
        self.stage2 = ResidualStage(c[0], c[1], cfg.blocks[1], 2, cfg.block, rng)
        self.stage3 = ResidualStage(c[1], c[2], cfg.blocks[2], 2, cfg.block, rng)
        self.stage4 = ResidualStage(c[2], c[3], cfg.blocks[3], 2, cfg.block, rng)

    def forward(self, x):
        x = F.max_pool2d(self.stem(x), 2, 2)
        f1 = residual_stage(x, self.stage1)
        f2 = residual_stage(f1, self.stage2)
        f3 = residual_stage(f2, self.stage3)
        f4 = residual_stage(f3, self.stage4)
        return FeaturePyramid(f1, f2, f3, f4)


# ------------------------------------------------------------------ branches

class CompressLow(Module):
    """1x1-project F1, F2, F3 to a common width, average-pool to F3's grid, sum, CBR."""

    def __init__(self, cfg: NetConfig, rng):
        super().__init__()
        c, cd = cfg.widths, cfg.compressed_channels
        self.proj1 = Conv2d(c[0], cd, 1, padding=0, rng=rng)
        self.proj2 = Conv2d(c[1], cd, 1, padding=0, rng=rng)
        self.proj3 = Conv2d(c[2], cd, 1, padding=0, rng=rng)
        self.fuse = CBR(cd, cd, 3, rng=rng)

    def forward(self, f1, f2, f3):
        if f1.shape[2] != 4 * f3.shape[2] or f2.shape[2] != 2 * f3.shape[2]:
            raise ValueError(f"inconsistent pyramid shapes {f1.shape}, {f2.shape}, {f3.shape}")
        a = F.avg_pool2d(self.proj1(f1), 4, 4)
        b = F.avg_pool2d(self.proj2(f2), 2, 2)
        return self.fuse(a + b + self.proj3(f3))


class DifferenceBranch(Module):
    def __init__(self, cfg: NetConfig, rng):
        super().__init__()
        cd = cfg.compressed_channels
        self.cbr1 = CBR(cd, cd, 3, rng=rng)
        self.cbr2 = CBR(cd, cd, 3, rng=rng)
        self.ca_reduce = Conv2d(cd, cd // cfg.reduction, 1, padding=0, bias=True, rng=rng)
        self.ca_expand = Conv2d(cd // cfg.reduction, cd, 1, padding=0, bias=True, rng=rng)
        self.sa_conv = Conv2d(cd, 1, cfg.spatial_kernel, bias=True, rng=rng)
        object.__setattr__(self, "last", {})

    def channel_attention(self, x):
        return F.sigmoid(self.ca_expand(F.relu(self.ca_reduce(F.global_avg_pool(x)))))

    def spatial_attention(self, x):
        return F.sigmoid(self.sa_conv(x))

    def forward(self, fd_prev, fd_cur):
        if fd_prev.shape != fd_cur.shape:
            raise ValueError(f"difference branch needs matching shapes, got {fd_prev.shape} and {fd_cur.shape}")
        delta = F.abs_diff(fd_cur, fd_prev)
        conv = self.cbr2(self.cbr1(delta))
        ca = self.channel_attention(conv)
        sa = self.spatial_attention(conv)
        weighted = conv * ca * sa
        d = F.flatten(F.global_avg_pool(weighted))
        self.last.update(delta=delta, conv=conv, ca=ca, sa=sa, weighted=weighted, d=d)
        return d


def cosine_similarity_map(fs_prev: Tensor, fs_cur: Tensor) -> Tensor:
    """Per-position cosine similarity across channels: (N, C, h, w) x2 -> (N, 1, h, w)."""
    return F.cosine_similarity_channels(fs_prev, fs_cur)


class SimilarityBranch(Module):
    def __init__(self, cfg: NetConfig, rng):
        super().__init__()
        self.cbr = CBR(1, cfg.similarity_channels, 3, rng=rng)
        object.__setattr__(self, "last", {})

    def forward(self, fs_prev, fs_cur):
        cs = cosine_similarity_map(fs_prev, fs_cur)
        s = F.flatten(F.global_avg_pool(self.cbr(cs)))
        self.last.update(cs=cs, s=s)
        return s


class RegressionHead(Module):
    def __init__(self, in_features: int, cfg: NetConfig, rng):
        super().__init__()
        h1, h2 = cfg.head_widths
        self.in_features = in_features
        self.lbrd1 = LBRD(in_features, h1, cfg.dropout, rng=rng)
        self.lbrd2 = LBRD(h1, h2, cfg.dropout, rng=rng)
        self.out = Linear(h2, 1, rng=rng)

    def forward(self, x, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"head expects (N, {self.in_features}) input, got {x.shape}")
        if self.training and rng is None:
            raise ValueError("train-mode forward needs a seeded random generator for dropout")
        h = self.lbrd2(self.lbrd1(x, rng), rng)
        return F.reshape(self.out(h), (x.shape[0],))


def regression_head(d: Tensor | None, s: Tensor | None, head: RegressionHead, rng=None) -> Tensor:
    parts = [t for t in (d, s) if t is not None]
    x = parts[0] if len(parts) == 1 else F.concat(parts, axis=1)
    return head(x, rng)


# ------------------------------------------------------------------ full model

class OdomNet(Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        object.__setattr__(self, "cfg", cfg)
        rng = np.random.default_rng(cfg.init_seed)
        self.extractor = FeatureExtractor(cfg, rng)
        v = cfg.variant
        head_in = 0
        if v in ("full", "difference_only"):
            self.compress = CompressLow(cfg, rng)
            self.difference = DifferenceBranch(cfg, rng)
            head_in += cfg.compressed_channels
        if v in ("full", "similarity_only"):
            self.similarity = SimilarityBranch(cfg, rng)
            head_in += cfg.similarity_channels
        if v == "feature_concat":
            head_in = 2 * cfg.similarity_length
        self.head = RegressionHead(head_in, cfg, rng)
        # affine output map so the head works on standardised distances
        self.register_buffer("label_shift", np.zeros(1))
        self.register_buffer("label_scale", np.ones(1))

    def set_label_scale(self, shift: float, scale: float) -> None:
        """Predictions become shift + scale * head output (meters)."""
        self.label_shift[...] = shift
        self.label_scale[...] = scale if scale > 1e-12 else 1.0

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def _as_input(self, b) -> Tensor:
        arr = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None, None]
        elif arr.ndim == 3:
            arr = arr[:, None]
        expected = (self.cfg.in_channels, self.cfg.height, self.cfg.width)
        if arr.shape[1:] != expected:
            raise ValueError(f"B-scan batch shape {arr.shape} does not match configured (N, {expected})")
        return b if isinstance(b, Tensor) and b.ndim == 4 else Tensor(arr)

    def extract_features(self, x) -> FeaturePyramid:
        """Backbone pyramid plus the compressed low-level map and the high-level map."""
        pyr = self.extractor(self._as_input(x))
        if hasattr(self, "compress"):
            pyr.fd = self.compress(pyr.f1, pyr.f2, pyr.f3)
        pyr.fs = pyr.f4
        return pyr

    def extract_pair(self, prev, cur) -> tuple[FeaturePyramid, FeaturePyramid]:
        """Run both frames through the shared extractor as one batch."""
        xp, xc = self._as_input(prev), self._as_input(cur)
        n = xp.shape[0]
        both = self.extract_features(F.concat([xp, xc], axis=0))

        def half(t, lo, hi):
            return None if t is None else F.take(t, lo, hi, axis=0)

        split = [FeaturePyramid(*(half(getattr(both, k), lo, hi) for k in ("f1", "f2", "f3", "f4", "fd", "fs")))
                 for lo, hi in ((0, n), (n, 2 * n))]
        return split[0], split[1]

    def forward(self, prev, cur, rng: np.random.Generator | None = None) -> Tensor:
        if self.training and rng is None:
            raise ValueError("train-mode forward needs a seeded random generator for dropout")
        p, c = self.extract_pair(prev, cur)
        v = self.cfg.variant
        d = self.difference(p.fd, c.fd) if v in ("full", "difference_only") else None
        s = self.similarity(p.fs, c.fs) if v in ("full", "similarity_only") else None
        if v == "feature_concat":
            d, s = F.flatten(p.fs), F.flatten(c.fs)
        z = regression_head(d, s, self.head, rng)
        return F.add(F.mul(z, Tensor(self.label_scale)), Tensor(self.label_shift))

    def predict(self, prev: np.ndarray, cur: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Eval-mode predictions for stacked (N, H, W) B-scans; restores the previous mode."""
        from .autonn import no_grad
        was_training = self.training
        self.eval()
        out = []
        with no_grad():
            for i in range(0, len(prev), batch_size):
                out.append(self.forward(prev[i:i + batch_size], cur[i:i + batch_size]).data)
        self.train(was_training)
        return np.concatenate(out) if out else np.zeros(0)


def rmse_loss(preds: Tensor, labels) -> Tensor:
    """sqrt(mean((pred - label)^2)); subgradient 0 at exactly zero error."""
    lab = labels if isinstance(labels, Tensor) else Tensor(np.asarray(labels, dtype=np.float64).reshape(-1))
    if preds.size == 0:
        raise ValueError("rmse_loss needs a non-empty batch")
    if preds.shape != lab.shape:
        raise ValueError(f"prediction shape {preds.shape} != label shape {lab.shape}")
    return F.sqrt(F.mean(F.square(preds - lab)))
