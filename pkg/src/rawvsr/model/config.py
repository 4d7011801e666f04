"""Network hyper-parameters and architectural switches."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

ALIGN_MODES = ("co", "sep", "none")
FUSION_MODES = ("skf", "concat")
BRANCH_MODES = ("both", "bayer", "subframe")


@dataclass(frozen=True)
class ModelConfig:
    """Settings of :class:`rawvsr.model.RealRawVSR`.

    Args:
        scale: magnification, one of 2, 3, 4.
        radius: temporal radius N; the network reads 2N+1 frames.
        channels: feature width C.
        levels: pyramid levels L of the alignment module.
        deform_groups: offset groups of the deformable convolutions.
        kernel_size: convolution size everywhere.
        n_extract_blocks: residual blocks per feature extractor.
        n_recon_blocks: residual blocks in the reconstruction trunk.
        sk_reduction: squeeze ratio of the channel fusion.
        alignment: ``co`` (offsets shared across branches), ``sep`` or ``none``.
        interaction: exchange features between branches after alignment.
        fusion: ``skf`` (selective kernel) or ``concat`` branch fusion.
        branches: ``both``, ``bayer`` or ``subframe``.
    """

    scale: int = 4
    radius: int = 2
    channels: int = 64
    levels: int = 3
    deform_groups: int = 8
    kernel_size: int = 3
    n_extract_blocks: int = 5
    n_recon_blocks: int = 10
    sk_reduction: int = 4
    alignment: str = "co"
    interaction: bool = True
    fusion: str = "skf"
    branches: str = "both"

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.levels < 2:
            raise ValueError("at least two pyramid levels are required")
        if self.channels % self.deform_groups:
            raise ValueError(f"channels {self.channels} not divisible by deform_groups {self.deform_groups}")
        if self.channels % self.sk_reduction:
            raise ValueError(f"channels {self.channels} not divisible by sk_reduction {self.sk_reduction}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.alignment not in ALIGN_MODES:
            raise ValueError(f"alignment must be one of {ALIGN_MODES}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.branches not in BRANCH_MODES:
            raise ValueError(f"branches must be one of {BRANCH_MODES}")
        if self.branches != "both" and (self.interaction or self.alignment == "co"):
            raise ValueError("single-branch models use alignment='sep' or 'none' and no interaction")

    @property
    def n_frames(self) -> int:
        return 2 * self.radius + 1

    @property
    def size_multiple(self) -> int:
        """Bayer-resolution side lengths must be multiples of this."""
        return 2 ** self.levels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "ModelConfig":
        return ModelConfig(**{**self.to_dict(), **kw})
