"""
Training state and the alternating discriminator / generator update.

    L_D = L_adv^D + L_cls^D + lambda_fre * L_fre^D + lambda_str * L_str^D
    L_G = L_adv^G + L_cls^G + lambda_fre * L_fre^G + lambda_str * L_str^G

A disabled module (or a lambda of 0) leaves its term out of the sum entirely.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdtm import losses, ops
from sdtm.config import RunConfig
from sdtm.data import Episode, stack_batch
from sdtm.errors import EmptyBatchError, LabelError, NumericError, RangeError, ShapeError
from sdtm.frequency import FreDNet, fred_losses, frequency_scores
from sdtm.models import DiscriminatorNet, GeneratorNet, check_conditioning, generator_forward
from sdtm.nn import Module, grad_norm, set_trainable
from sdtm.optim import Adam, lr_schedule
from sdtm.schemas import StepReport
from sdtm.structural import StructDNet, laplacian_filter, structd_losses, structd_score
from sdtm.tensor import Tape, Tensor, debug_numerics

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    config: RunConfig
    n_classes: int
    channels: int
    gen: GeneratorNet
    disc: DiscriminatorNet
    structd: Optional[StructDNet]
    fred: Optional[FreDNet]
    opt_g: Adam
    opt_d: Adam
    rng_data: np.random.Generator
    rng_texmod: np.random.Generator
    iteration: int = 0
    integrity_errors: List[str] = field(default_factory=list)

    @property
    def total_iters(self) -> int:
        return self.config.total_iters

    @property
    def lambdas(self) -> Tuple[float, float]:
        return self.config.lambdas

    @property
    def skipped_steps(self) -> int:
        return self.opt_g.skipped + self.opt_d.skipped

    def networks(self) -> Dict[str, Module]:
        nets: Dict[str, Module] = {"gen": self.gen, "disc": self.disc}
        if self.structd is not None:
            nets["structd"] = self.structd
        if self.fred is not None:
            nets["fred"] = self.fred
        return nets

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(f"{net}.{name}", p) for net, module in self.networks().items() for name, p in module.named_parameters()]


def discriminator_params(disc: DiscriminatorNet, structd: Optional[StructDNet], fred: Optional[FreDNet]) -> List[Tensor]:
    params = disc.parameters()
    if structd is not None:
        params += structd.parameters()
    if fred is not None:
        params += fred.parameters()
    return params


def build_state(config: RunConfig, n_classes: int, channels: int = 3) -> TrainState:
    """Fresh networks and optimizers; every random stream derives from ``config.seed``."""
    init_seq, data_seq, texmod_seq = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(init_seq)
    rng_texmod = np.random.default_rng(texmod_seq)

    gen = GeneratorNet(
        channels,
        rng_init,
        width=config.width,
        slope=config.leaky_slope,
        texmod_enabled=config.texmod,
        texmod_rng=rng_texmod,
        texmod_zero_init=config.texmod_zero_init,
        eps=config.norm_eps,
        ref_reduction=config.ref_reduction,
    )
    disc = DiscriminatorNet(channels, n_classes, rng_init, width=config.width, slope=config.leaky_slope, tap_layer=config.tap_layer)
    structd = StructDNet(channels, rng_init, width=config.structd_width, slope=config.leaky_slope) if config.structd else None
    fred = FreDNet(3 * disc.tap_channels, rng_init, width=config.fred_width, slope=config.leaky_slope) if config.fred else None

    betas = (config.adam_beta1, config.adam_beta2)
    return TrainState(
        config=config,
        n_classes=n_classes,
        channels=channels,
        gen=gen,
        disc=disc,
        structd=structd,
        fred=fred,
        opt_g=Adam(gen.parameters(), betas=betas, eps=config.adam_eps),
        opt_d=Adam(discriminator_params(disc, structd, fred), betas=betas, eps=config.adam_eps),
        rng_data=np.random.default_rng(data_seq),
        rng_texmod=rng_texmod,
    )


def adversarial_losses(d: DiscriminatorNet, x_real: Tensor, x_fake: Tensor) -> Tuple[Tensor, Tensor]:
    if x_real.shape[1:] != x_fake.shape[1:]:
        raise ShapeError(f"real images {x_real.shape} and fakes {x_fake.shape} differ per sample")
    if x_real.shape[0] == 0 or x_fake.shape[0] == 0:
        raise EmptyBatchError("adversarial loss needs at least one real and one fake image")
    return losses.hinge_losses(d(x_real).score, d(x_fake).score)


def classification_losses(d: DiscriminatorNet, x: Tensor, labels: Sequence[int], on_fake: bool = False) -> Tensor:
    """-log P(c|x); for fakes the conditioning episode's category is the target."""
    for label in labels:
        if not 0 <= label < d.n_classes:
            raise LabelError(f"label {label} outside the {d.n_classes} seen categories")
    return losses.classification(d(x).logits, labels)


@dataclass
class LossParts:
    """Loss terms of one side; ``None`` marks a term that is switched off."""

    adv: Tensor
    cls: Tensor
    fre: Optional[Tensor] = None
    structural: Optional[Tensor] = None


def weighted_total(parts: LossParts, lambda_str: float, lambda_fre: float) -> Tensor:
    total = ops.add(parts.adv, parts.cls)
    if parts.fre is not None and lambda_fre > 0:
        total = ops.add(total, ops.scale(parts.fre, lambda_fre))
    if parts.structural is not None and lambda_str > 0:
        total = ops.add(total, ops.scale(parts.structural, lambda_str))
    return total


def active_lambdas(config: RunConfig) -> Tuple[float, float]:
    """(lambda_str, lambda_fre) with switched-off modules forced to 0."""
    return (
        config.lambda_str if config.structd_active else 0.0,
        config.lambda_fre if config.fred_active else 0.0,
    )


def total_losses(state: TrainState, d_parts: LossParts, g_parts: LossParts) -> Tuple[Tensor, Tensor]:
    """(L_D, L_G). Terms of disabled modules are omitted, never multiplied by zero."""
    lambdas = active_lambdas(state.config)
    return weighted_total(d_parts, *lambdas), weighted_total(g_parts, *lambdas)


def _check_finite(terms: Dict[str, Optional[Tensor]]) -> None:
    for name, value in terms.items():
        if value is not None and not np.all(np.isfinite(value.data)):
            raise NumericError(f"loss became {value.data.reshape(-1)[0]}", term=name)


def _value(t: Optional[Tensor]) -> Optional[float]:
    return None if t is None else t.item()


def train_step(state: TrainState, batch: Sequence[Episode]) -> StepReport:
    """One D update on real images and detached fakes, then one G update with the discriminators frozen."""
    if not batch:
        raise EmptyBatchError("train_step needs at least one episode")
    if state.iteration >= state.total_iters:
        raise RangeError(f"iteration {state.iteration} already reached total_iters {state.total_iters}")
    config = state.config
    lr = lr_schedule(state.iteration, state.total_iters, config.base_lr)
    conditioning, labels = stack_batch(batch)
    check_conditioning(conditioning)
    for label in labels:
        if not 0 <= label < state.n_classes:
            raise LabelError(f"episode label {label} is not a seen category")

    x_real = ops.concat(conditioning, axis=0) if len(conditioning) > 1 else conditioning[0]
    real_labels = labels * len(conditioning)
    use_structd = config.structd_active and state.structd is not None
    use_fred = config.fred_active and state.fred is not None
    d_params = discriminator_params(state.disc, state.structd, state.fred)
    lap_real = laplacian_filter(x_real) if use_structd else None

    with debug_numerics(config.debug_numerics):
        tape_g = Tape()
        with tape_g:
            x_fake, mod_index = state.gen(conditioning, state.rng_texmod)

        # discriminator step
        state.opt_d.zero_grad()
        with Tape():
            fake = x_fake.detach()
            out_real, out_fake = state.disc(x_real), state.disc(fake)
            adv_d, _ = losses.hinge_losses(out_real.score, out_fake.score)
            cls_d = losses.classification(out_real.logits, real_labels)
            if config.cls_fake_in_d:
                cls_d = ops.add(cls_d, losses.classification(out_fake.logits, labels))
            str_d = fre_d = None
            if use_structd:
                str_d, _ = structd_losses(structd_score(state.structd, lap_real), structd_score(state.structd, laplacian_filter(fake)))
            if use_fred:
                fre_d, _ = fred_losses(state.fred, out_real.tap, out_fake.tap)
            d_parts = LossParts(adv=adv_d, cls=cls_d, fre=fre_d, structural=str_d)
            loss_d = weighted_total(d_parts, *active_lambdas(config))
            _check_finite({"adv_d": adv_d, "cls_d": cls_d, "structd_d": str_d, "fred_d": fre_d, "loss_d": loss_d})
            loss_d.backward()
        norm_d = grad_norm(d_params)
        stepped_d = state.opt_d.step(lr, "discriminator")

        # generator step
        state.opt_g.zero_grad()
        set_trainable(d_params, False)
        try:
            with tape_g:
                out_fake = state.disc(x_fake)
                adv_g = losses.generated(out_fake.score)
                cls_g = losses.classification(out_fake.logits, labels)
                str_g = fre_g = None
                if use_structd:
                    str_g = losses.generated(structd_score(state.structd, laplacian_filter(x_fake)))
                if use_fred:
                    fre_g = losses.generated(frequency_scores(state.fred, out_fake.tap))
                g_parts = LossParts(adv=adv_g, cls=cls_g, fre=fre_g, structural=str_g)
                loss_g = weighted_total(g_parts, *active_lambdas(config))
                _check_finite({"adv_g": adv_g, "cls_g": cls_g, "structd_g": str_g, "fred_g": fre_g, "loss_g": loss_g})
                loss_g.backward()
        finally:
            set_trainable(d_params, True)
        norm_g = grad_norm(state.gen.parameters())
        stepped_g = state.opt_g.step(lr, "generator")

    state.iteration += 1
    return StepReport(
        iteration=state.iteration,
        lr=lr,
        loss_d=loss_d.item(),
        loss_g=loss_g.item(),
        adv_d=adv_d.item(),
        adv_g=adv_g.item(),
        cls_d=cls_d.item(),
        cls_g=cls_g.item(),
        structd_d=_value(str_d),
        structd_g=_value(str_g),
        fred_d=_value(fre_d),
        fred_g=_value(fre_g),
        grad_norm_d=norm_d,
        grad_norm_g=norm_g,
        mod_index=mod_index,
        skipped_d=not stepped_d,
        skipped_g=not stepped_g,
    )


def generate(state: TrainState, images: Sequence[Tensor], rng: np.random.Generator) -> Tensor:
    """Inference pass: no tape, batch tensors of shape [B, C, H, W]."""
    return generator_forward(state.gen, images, rng)
