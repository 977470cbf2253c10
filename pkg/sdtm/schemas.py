from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.8g}"
    return str(value)


class KeyValueReport(BaseModel):
    """Reports serialize to one line of space-separated key=value pairs; unset fields are left out."""

    model_config = ConfigDict(frozen=True)

    def to_line(self) -> str:
        return " ".join(f"{k}={format_value(v)}" for k, v in self.model_dump().items() if v is not None)


def parse_line(line: str) -> dict:
    """Inverse of ``to_line`` up to value types: every value comes back as a string."""
    pairs = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"not a key=value token: {token!r}")
        pairs[key] = value
    return pairs


# Training
class StepReport(KeyValueReport):
    iteration: int = Field(..., ge=1, description="Iteration count after the step")
    lr: float
    loss_d: float
    loss_g: float
    adv_d: float
    adv_g: float
    cls_d: float
    cls_g: float
    structd_d: Optional[float] = None
    structd_g: Optional[float] = None
    fred_d: Optional[float] = None
    fred_g: Optional[float] = None
    grad_norm_d: float
    grad_norm_g: float
    mod_index: int = Field(..., ge=0)
    skipped_d: bool = False
    skipped_g: bool = False


# Evaluation
class EvalReport(KeyValueReport):
    """Desk-scale stand-ins for FID and LPIPS; not comparable to published numbers."""

    iteration: int
    split: str
    n_episodes: int
    proxy_frechet: float = Field(..., ge=0)
    proxy_diversity_l1: float = Field(..., ge=0)
    proxy_laplacian_gap: float = Field(..., ge=0)
    proxy_high_freq_gap: float = Field(..., ge=0)


class SweepRow(KeyValueReport):
    lambda_str: float
    lambda_fre: float
    iters: int
    loss_d: float
    loss_g: float
    proxy_frechet: float
    proxy_diversity_l1: float
    proxy_laplacian_gap: float
    proxy_high_freq_gap: float


class SelftestItem(KeyValueReport):
    name: str
    passed: bool
    detail: str = ""

    def to_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}" + (f" ({self.detail})" if self.detail else "")


class CostRow(KeyValueReport):
    component: str
    parameters: int
    overhead_pct: Optional[float] = None


# Synthetic corpus
class SyntheticSpec(BaseModel):
    n_categories: int = Field(4, ge=1)
    images_per_category: int = Field(50, ge=1)
    image_size: int = Field(32, ge=8)
    hue_jitter: float = Field(0.03, ge=0, le=0.5, description="Max absolute hue shift per image")
    position_sigma: float = Field(1.5, ge=0, description="Std of the shape centre offset, in pixels")
    scale_range: Tuple[float, float] = (0.85, 1.15)
    seed: int = 7
    seen_fraction: float = Field(0.8, gt=0, lt=1)

    @field_validator("scale_range")
    @classmethod
    def check_scale_range(cls, v):
        lo, hi = v
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range needs 0 < low <= high, got {v}")
        return v

    @model_validator(mode="after")
    def check_split(self) -> "SyntheticSpec":
        if self.n_categories >= 2 and round(self.n_categories * self.seen_fraction) < 1:
            raise ValueError("seen_fraction leaves no seen category")
        return self

    @classmethod
    def zero_jitter(cls, **kwargs) -> "SyntheticSpec":
        return cls(hue_jitter=0.0, position_sigma=0.0, scale_range=(1.0, 1.0), **kwargs)
