"""Training loop: step mechanics, pool regeneration, checkpointing.

One step trains on a single defective sample x, an unpaired mask y, and
a normal image n: the generators update first (adversarial + cycle +
scaled-pattern terms), then both discriminators take one step on the
detached fakes. The synthetic pool is regenerated on a fixed epoch
interval; under the progressive opacity mode each regeneration slides
the opacity window lower.

Reproducibility contract: everything is derived from config.seed. Two
runs with the same config and dataset produce bitwise-identical loss
logs, and resuming from a checkpoint written at a regeneration epoch
replays the remainder of the run exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio, synthesis
from .config import TrainConfig
from .dataio import Checkpoint, DatasetIndex, load_checkpoint, save_checkpoint
from .errors import NonFiniteLossError
from .losses import (
    LossBreakdown,
    adversarial_d_loss,
    adversarial_g_loss,
    dmcc_loss,
    dynamic_mask,
    mask_free_cycle,
    sp_loss,
    sp_target,
    total_generator_loss,
    weighted_total,
)
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
)

# Child-seed tags (see synthesis.derive_seed).
_TAG_INIT_G = 11
_TAG_INIT_F = 12
_TAG_INIT_DY = 13
_TAG_INIT_DX = 14
_TAG_STREAM = 15
_TAG_REGEN = 16


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """H x W x C float array -> 1 x C x H x W float32 tensor."""
    arr = np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0)


def encode_mask(mask: np.ndarray) -> np.ndarray:
    """{0,1} H x W mask -> H x W x 3 float32 in {-1, +1} for the mask domain."""
    encoded = (mask.astype(np.float32) * 2.0 - 1.0)[..., None]
    return np.repeat(encoded, 3, axis=2)


@dataclass
class TrainState:
    config: TrainConfig
    index: DatasetIndex
    g: torch.nn.Module
    f: torch.nn.Module
    d_y: torch.nn.Module
    d_x: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    normals: list
    epoch: int = 0
    step: int = 0
    regen_index: int = 0
    pool: list = field(default_factory=list)
    unpaired: list = field(default_factory=list)
    history: list = field(default_factory=list)


@dataclass
class FitResult:
    checkpoint_path: Path
    checkpoint_paths: list[Path]
    history: list[LossBreakdown]
    regen_epochs: list[int]


def make_optimizers(gen_params, disc_params, config: TrainConfig):
    """One Adam over G and F jointly, one over both discriminators."""
    opt_g = torch.optim.Adam(gen_params, lr=config.learning_rate, betas=config.adam_betas)
    opt_d = torch.optim.Adam(disc_params, lr=config.learning_rate, betas=config.adam_betas)
    return opt_g, opt_d


def _build_networks(config: TrainConfig):
    gen_spec = GeneratorSpec(
        base_channels=config.gen_base_channels, residual_blocks=config.gen_residual_blocks
    )
    disc_spec = DiscriminatorSpec(
        base_channels=config.disc_base_channels, layers=config.disc_layers
    )
    seed = config.seed
    g = build_generator(gen_spec, synthesis.derive_seed(seed, _TAG_INIT_G))
    f = build_generator(gen_spec, synthesis.derive_seed(seed, _TAG_INIT_F))
    d_y = build_discriminator(disc_spec, synthesis.derive_seed(seed, _TAG_INIT_DY))
    d_x = build_discriminator(disc_spec, synthesis.derive_seed(seed, _TAG_INIT_DX))
    return g, f, d_y, d_x


def init_state(config: TrainConfig, index: DatasetIndex) -> TrainState:
    config.validate()
    g, f, d_y, d_x = _build_networks(config)
    opt_g, opt_d = make_optimizers(
        itertools.chain(g.parameters(), f.parameters()),
        itertools.chain(d_y.parameters(), d_x.parameters()),
        config,
    )
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, _TAG_STREAM])
    )
    normals = [dataio.load_image(p, config.resolution) for p in index.normal_train]
    return TrainState(
        config=config,
        index=index,
        g=g,
        f=f,
        d_y=d_y,
        d_x=d_x,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
        normals=normals,
    )


def _window_for(config: TrainConfig, regen_index: int) -> synthesis.OpacityWindow:
    mode = config.opacity_mode
    if mode.kind == "pos":
        return synthesis.opacity_window(regen_index, config.regen_count())
    if mode.kind == "fixed":
        return synthesis.OpacityWindow(mode.value, mode.value)
    return synthesis.OpacityWindow(mode.lo, mode.hi)


def _regenerate(state: TrainState, regen_index: int) -> None:
    window = _window_for(state.config, regen_index)
    samples, unpaired = synthesis.regenerate_dataset(
        state.index,
        state.config.synth_count,
        window,
        synthesis.derive_seed(state.config.seed, _TAG_REGEN, regen_index),
        state.config.resolution,
    )
    state.pool = samples
    state.unpaired = unpaired
    state.regen_index = regen_index


def train_step(state: TrainState, x: np.ndarray, y: np.ndarray, n: np.ndarray) -> LossBreakdown:
    """One optimization step on (defective x, unpaired mask y, normal n).

    x and n are H x W x 3 images in [-1, 1]; y is a {0,1} H x W mask.
    Disabled toggles contribute exactly zero and skip their forwards:
    without the cycle, F and D_X are never touched.
    """
    config = state.config
    weights = config.weights
    x_t = to_tensor(x)
    n_t = to_tensor(n)
    y_t = to_tensor(encode_mask(y))
    zero = torch.zeros(())

    state.opt_g.zero_grad(set_to_none=True)
    m_o = state.g(x_t)
    gan_g_t = adversarial_g_loss(state.d_y(m_o))
    recovered = None
    if config.enable_cycle:
        recovered = state.f(m_o)
        y_roundtrip = state.g(state.f(y_t))
        gan_f_t = adversarial_g_loss(state.d_x(recovered))
        if config.enable_dynamic_mask:
            mask = dynamic_mask(m_o)
        else:
            mask = torch.zeros_like(m_o[:, :1])
        cyc_t = dmcc_loss(x_t, recovered, mask) + mask_free_cycle(y_t, y_roundtrip)
    else:
        gan_f_t = zero
        cyc_t = zero
    if config.enable_sp:
        prediction = state.g(n_t)
        sp_t = sp_loss(prediction, sp_target(n_t, weights.alpha, weights.beta))
    else:
        sp_t = zero

    components = {
        "gan_g": gan_g_t.detach().item(),
        "gan_f": gan_f_t.detach().item(),
        "cyc": cyc_t.detach().item(),
        "sp": sp_t.detach().item(),
    }
    # validate finiteness before the optimizer can absorb a poisoned step
    total_generator_loss(components, weights)

    total_t = weighted_total(gan_g_t, gan_f_t, cyc_t, sp_t, weights)
    total_t.backward()
    state.opt_g.step()

    state.opt_d.zero_grad(set_to_none=True)
    d_y_t = adversarial_d_loss(state.d_y(y_t), state.d_y(m_o.detach()))
    if config.enable_cycle:
        d_x_t = adversarial_d_loss(state.d_x(x_t), state.d_x(recovered.detach()))
        (d_y_t + d_x_t).backward()
    else:
        d_x_t = zero
        d_y_t.backward()
    state.opt_d.step()

    breakdown = total_generator_loss(
        components, weights, d_y=d_y_t.detach().item(), d_x=d_x_t.detach().item()
    )
    state.history.append(breakdown)
    return breakdown


def _snapshot(state: TrainState, config: TrainConfig) -> Checkpoint:
    return Checkpoint(
        fingerprint=config.fingerprint(),
        epoch=state.epoch,
        step=state.step,
        regen_index=state.regen_index,
        numpy_rng_state=state.rng.bit_generator.state,
        model_states={
            "g": state.g.state_dict(),
            "f": state.f.state_dict(),
            "d_y": state.d_y.state_dict(),
            "d_x": state.d_x.state_dict(),
        },
        optim_states={
            "gen": state.opt_g.state_dict(),
            "disc": state.opt_d.state_dict(),
        },
        torch_rng_state=torch.get_rng_state(),
    )


def restore_state(config: TrainConfig, index: DatasetIndex, checkpoint: Checkpoint) -> TrainState:
    """Rebuild a TrainState from a checkpoint, including its synth pool.

    The pool is replayed from the stored regeneration index: pool
    contents are a pure function of (config, index, regen index), so no
    sample data needs to live inside the checkpoint.
    """
    state = init_state(config, index)
    state.g.load_state_dict(checkpoint.model_states["g"])
    state.f.load_state_dict(checkpoint.model_states["f"])
    state.d_y.load_state_dict(checkpoint.model_states["d_y"])
    state.d_x.load_state_dict(checkpoint.model_states["d_x"])
    state.opt_g.load_state_dict(checkpoint.optim_states["gen"])
    state.opt_d.load_state_dict(checkpoint.optim_states["disc"])
    state.rng.bit_generator.state = checkpoint.numpy_rng_state
    torch.set_rng_state(checkpoint.torch_rng_state)
    state.epoch = checkpoint.epoch
    state.step = checkpoint.step
    _regenerate(state, checkpoint.regen_index)
    return state


def _is_regen_epoch(epoch: int, config: TrainConfig) -> bool:
    if epoch % config.regen_interval_epochs != 0:
        return False
    # the last scheduled window may be partial; it reuses the prior pool
    return epoch == 0 or epoch + config.regen_interval_epochs <= config.epochs


def fit(
    config: TrainConfig,
    index: DatasetIndex,
    out_dir: Path | str,
    resume_from: Path | str | None = None,
    progress=None,
) -> FitResult:
    """Run the full training schedule and write checkpoints + loss log.

    Writes `loss_log.jsonl` (one record per step), a checkpoint at every
    regeneration epoch, and `ckpt-final.bin` at the end. With
    `resume_from`, continues from that checkpoint and logs only the
    remaining steps into this run's out_dir.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is None:
        state = init_state(config, index)
        log_mode = "w"
        replayed_epoch = None
    else:
        checkpoint = load_checkpoint(resume_from, expected_fingerprint=config.fingerprint())
        state = restore_state(config, index, checkpoint)
        log_mode = "a"
        # restore_state already replayed this epoch's pool; the next
        # regeneration event advances the schedule as if uninterrupted
        replayed_epoch = state.epoch

    checkpoint_paths: list[Path] = []
    regen_epochs: list[int] = []
    log_path = out_dir / "loss_log.jsonl"

    with log_path.open(log_mode) as log_fh:
        for epoch in range(state.epoch, config.epochs):
            state.epoch = epoch
            if _is_regen_epoch(epoch, config) and epoch != replayed_epoch:
                _regenerate(state, epoch // config.regen_interval_epochs)
                regen_epochs.append(epoch)
                path = out_dir / f"ckpt-epoch{epoch:05d}.bin"
                save_checkpoint(_snapshot(state, config), path)
                checkpoint_paths.append(path)

            order = state.rng.permutation(len(state.pool))
            for pool_idx in order:
                sample = state.pool[int(pool_idx)]
                y = state.unpaired[int(state.rng.integers(len(state.unpaired)))]
                n = state.normals[int(state.rng.integers(len(state.normals)))]
                breakdown = train_step(state, sample.defective, y, n)
                record = {"step": state.step, "epoch": epoch}
                record.update(breakdown.as_dict())
                log_fh.write(json.dumps(record) + "\n")
                state.step += 1
            if progress is not None:
                progress(epoch, state.step, breakdown)

    state.epoch = config.epochs
    final_path = out_dir / "ckpt-final.bin"
    save_checkpoint(_snapshot(state, config), final_path)
    checkpoint_paths.append(final_path)
    return FitResult(
        checkpoint_path=final_path,
        checkpoint_paths=checkpoint_paths,
        history=state.history,
        regen_epochs=regen_epochs,
    )
