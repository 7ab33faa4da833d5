"""Training orchestration for the per-part VAE-GANs.

Phase 1 pre-trains the VAE (reconstruction + KL + gated symmetry loss);
phase 2 fine-tunes adversarially with a WGAN-GP critic, alternating
critic_steps critic updates with one generator update. Training is a
pure function of (corpus, config, seed) when run single-threaded.
"""

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import optim

from .models import (
    Discriminator,
    GenLossConfig,
    VolumeDecoder,
    VolumeEncoder,
    load_checkpoint,
    loss_adv,
    loss_kl,
    loss_recon,
    loss_ref,
    sample_z,
    save_checkpoint,
    stage_channels,
    warp_volumes,
)
from .seeds import derive_seed
from .synthdata import augment_transform
from .voxgrid import VoxelGrid


class TrainingDivergence(RuntimeError):
    """Raised when any training loss goes non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.5           # ADAM beta1
    batch_size: int = 16         # desk-scale default; 32 at full scale
    vae_epochs: int = 10
    gan_epochs: int = 4
    epochs: int = 10             # assembler/projector trainers
    critic_steps: int = 5
    latent_dim: int = 16
    base_channels: int = 32
    seed: int = 0
    recon_scale: float = None    # weight on the mean-form recon; None = R^3/4
    augment_prob: float = 0.5    # chance a sample is scale/translate augmented
    loss: GenLossConfig = field(default_factory=GenLossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = GenLossConfig(**self.loss)
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.vae_epochs < 0 or self.gan_epochs < 0 or self.epochs < 1:
            raise ValueError("epoch counts must be nonnegative (epochs positive)")
        if self.vae_epochs + self.gan_epochs < 1:
            raise ValueError("need at least one training epoch")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if not (0.0 <= self.augment_prob <= 1.0):
            raise ValueError("augment_prob must lie in [0, 1]")
        if self.recon_scale is not None and self.recon_scale <= 0:
            raise ValueError("recon_scale must be positive")

    def resolved_recon_scale(self, resolution):
        """Desk-scale balance: the mean-form recon times R^3/4 keeps the
        reconstruction pressure commensurate with the summed KL term."""
        if self.recon_scale is not None:
            return self.recon_scale
        return resolution ** 3 / 4.0


@dataclass
class TrainResult:
    payload: dict
    curves: list
    checkpoint_path: Path = None
    curves_path: Path = None


CURVE_FIELDS = ("epoch", "phase", "recon", "kl", "ref", "adv_d", "adv_g", "gp", "total")


def _check_finite(value, what, part_label):
    if not np.isfinite(value):
        raise TrainingDivergence(f"{what} diverged (non-finite) training part {part_label!r}")


def _augment_batch(base, idxs, epoch, cfg, resolution):
    """Seeded scale/translate augmentation, batched through the torch warp.

    Each sample is augmented with probability augment_prob; the rest pass
    through unperturbed so the decoder keeps anchored-position targets.
    """
    x = base[idxs].clone()
    gate = np.random.default_rng(derive_seed(cfg.seed, "aug-gate", epoch, int(idxs[0])))
    selected = gate.random(len(idxs)) < cfg.augment_prob
    if not selected.any():
        return x
    scales, trans = [], []
    for i, hit in zip(idxs, selected):
        if not hit:
            continue
        t = augment_transform(derive_seed(cfg.seed, "aug", epoch, int(i)), resolution)
        scales.append(t.scale)
        trans.append(t.translation)
    mask = torch.from_numpy(selected)
    x[mask] = warp_volumes(
        x[mask],
        torch.tensor(scales, dtype=torch.float32),
        torch.tensor(trans, dtype=torch.float32),
    )
    return x


def build_nets(resolution, cfg):
    enc = VolumeEncoder(resolution, cfg.latent_dim, cfg.base_channels)
    dec = VolumeDecoder(resolution, cfg.latent_dim, cfg.base_channels)
    disc = Discriminator(resolution, cfg.base_channels)
    return enc, dec, disc


def train_part_generator(part_label, corpus, cfg, out_dir=None):
    """Train one part generator; emits a checkpoint plus loss curves."""
    pairs = corpus.part_volumes(part_label)
    if not pairs:
        raise ValueError(f"corpus has no nonempty volumes for part {part_label!r}")
    r = corpus.resolution
    base = torch.from_numpy(np.stack([p.values for p, _ in pairs]))[:, None]
    deltas = torch.tensor([1.0 if f else 0.0 for _, f in pairs])
    n = base.shape[0]

    torch.manual_seed(derive_seed(cfg.seed, "init", part_label))
    enc, dec, disc = build_nets(r, cfg)
    opt_g = optim.Adam(
        list(enc.parameters()) + list(dec.parameters()),
        lr=cfg.learning_rate, betas=(cfg.beta1, 0.999),
    )
    opt_d = optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999))

    curves = []
    step = 0
    rscale = cfg.resolved_recon_scale(r)
    for epoch in range(cfg.vae_epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(n)
        sums = np.zeros(3)
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idxs = order[lo:lo + cfg.batch_size]
            x = _augment_batch(base, idxs, epoch, cfg, r)
            mu, lv = enc(x)
            z = sample_z(mu, lv, derive_seed(cfg.seed, "z", step))
            y = dec(z)
            l_rec = loss_recon(x, y)
            l_kl = loss_kl(mu, lv)
            l_ref = loss_ref(y, deltas[idxs])
            total = rscale * l_rec + cfg.loss.alpha1 * l_kl + l_ref
            _check_finite(total.item(), "vae loss", part_label)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            sums += (l_rec.item(), l_kl.item(), l_ref.item())
            batches += 1
            step += 1
        m = sums / batches
        curves.append({"epoch": epoch, "phase": "vae", "recon": m[0], "kl": m[1],
                       "ref": m[2], "adv_d": "", "adv_g": "", "gp": "",
                       "total": rscale * m[0] + cfg.loss.alpha1 * m[1] + m[2]})

    for g_epoch in range(cfg.gan_epochs):
        epoch = cfg.vae_epochs + g_epoch
        order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(n)
        sums = np.zeros(6)
        counts = np.zeros(2)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idxs = order[lo:lo + cfg.batch_size]
            x = _augment_batch(base, idxs, epoch, cfg, r)
            gen_prior = torch.Generator().manual_seed(derive_seed(cfg.seed, "prior", step))
            z_prior = torch.randn(len(idxs), cfg.latent_dim, generator=gen_prior)
            with torch.no_grad():
                fake = dec(z_prior)
            d_loss, _, gp = loss_adv(disc, x, fake, lam=cfg.loss.lam,
                                     seed=derive_seed(cfg.seed, "mix", step))
            _check_finite(d_loss.item(), "critic loss", part_label)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            sums[:2] += (d_loss.item(), gp.item())
            counts[0] += 1

            if (b + 1) % cfg.critic_steps == 0:
                mu, lv = enc(x)
                z = sample_z(mu, lv, derive_seed(cfg.seed, "z", step))
                y = dec(z)
                fake2 = dec(z_prior)
                g_term = disc(fake2).mean()
                total = (rscale * loss_recon(x, y) + cfg.loss.alpha1 * loss_kl(mu, lv)
                         - cfg.loss.alpha2 * g_term + loss_ref(y, deltas[idxs]))
                _check_finite(total.item(), "generator loss", part_label)
                opt_g.zero_grad()
                total.backward()
                opt_g.step()
                sums[2:] += (loss_recon(x, y).item(), loss_kl(mu, lv).item(),
                             g_term.item(), total.item())
                counts[1] += 1
            step += 1
        gsteps = max(counts[1], 1)
        curves.append({"epoch": epoch, "phase": "gan",
                       "recon": sums[2] / gsteps, "kl": sums[3] / gsteps, "ref": "",
                       "adv_d": sums[0] / counts[0], "adv_g": sums[4] / gsteps,
                       "gp": sums[1] / counts[0], "total": sums[5] / gsteps})

    meta = {
        "resolution": r,
        "latent_dim": cfg.latent_dim,
        "base_channels": cfg.base_channels,
        "channels": stage_channels(r, cfg.base_channels),
        "part_label": part_label,
        "category": corpus.category.name,
        "train_config": asdict(cfg),
        "n_train_volumes": n,
    }
    state = {"encoder": enc.state_dict(), "decoder": dec.state_dict(),
             "discriminator": disc.state_dict()}
    payload = {"version": 1, "kind": "partgen", "meta": meta, "state_dict": state}

    result = TrainResult(payload, curves)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out_dir / f"partgen_{part_label}.pt"
        save_checkpoint(result.checkpoint_path, "partgen", state, meta)
        result.curves_path = out_dir / f"partgen_{part_label}_losses.csv"
        write_curves(result.curves_path, curves)
    return result


def write_curves(path, curves):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for row in curves:
            writer.writerow(row)


def load_generator(source):
    """Rebuild (payload, encoder, decoder) in eval mode from a checkpoint."""
    payload = source if isinstance(source, dict) else load_checkpoint(source, "partgen")
    meta = payload["meta"]
    enc = VolumeEncoder(meta["resolution"], meta["latent_dim"], meta["base_channels"])
    dec = VolumeDecoder(meta["resolution"], meta["latent_dim"], meta["base_channels"])
    enc.load_state_dict(payload["state_dict"]["encoder"])
    dec.load_state_dict(payload["state_dict"]["decoder"])
    enc.eval()
    dec.eval()
    return payload, enc, dec


def generate_part(source, z):
    """Decode one latent section into a part volume."""
    payload, _, dec = load_generator(source)
    d = payload["meta"]["latent_dim"]
    z = np.asarray(z, dtype=np.float32)
    if z.shape != (d,):
        raise ValueError(f"latent must have length {d}, got shape {z.shape}")
    with torch.no_grad():
        vol = dec(torch.from_numpy(z)[None])[0, 0].numpy()
    return VoxelGrid(np.clip(vol, 0.0, 1.0))


def decode_batch(dec, z):
    """Decode [N, d] latents to [N, R, R, R] occupancies (no grad)."""
    with torch.no_grad():
        return dec(torch.as_tensor(z, dtype=torch.float32)).squeeze(1).numpy()


def evaluate_recon(enc, dec, volumes):
    """Mean-path reconstruction MSE over a stack of volumes [N, R, R, R]."""
    x = torch.as_tensor(volumes, dtype=torch.float32)[:, None]
    was_training = (enc.training, dec.training)
    enc.eval()
    dec.eval()
    with torch.no_grad():
        mu, _ = enc(x)
        y = dec(mu)
        out = loss_recon(x, y).item()
    if was_training[0]:
        enc.train()
    if was_training[1]:
        dec.train()
    return out
