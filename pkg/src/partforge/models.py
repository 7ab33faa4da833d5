"""Networks and losses: part VAE-GAN pieces, assembler trunk, projector.

Volumes are [B, C, X, Y, Z] float tensors. Encoders downsample with
kernel-4 stride-2 convolutions, channels doubling from a base of 32;
the stage count is derived from the resolution so 16/32/64 grids all
reduce to a 2^3 spatial core.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_VERSION = 1


@dataclass
class GenLossConfig:
    """Loss weights for the part generators."""

    alpha1: float = 2.0      # KL weight
    alpha2: float = 1e-3     # adversarial weight
    lam: float = 10.0        # gradient penalty weight

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.lam < 0:
            raise ValueError("loss weights must be nonnegative")


def n_stages(resolution):
    """Conv stage count: ceil(log2 R) - 1, leaving a 2^3 spatial core."""
    return max(1, math.ceil(math.log2(resolution)) - 1)


def stage_channels(resolution, base_channels=32):
    return [base_channels * (2 ** i) for i in range(n_stages(resolution))]


class ConvTrunk(nn.Module):
    """Downsampling conv stack shared by encoder/discriminator/assembler."""

    def __init__(self, resolution, in_channels=1, base_channels=32, batchnorm=True):
        super().__init__()
        chans = stage_channels(resolution, base_channels)
        layers = []
        cin = in_channels
        for i, cout in enumerate(chans):
            layers.append(nn.Conv3d(cin, cout, 4, stride=2, padding=1))
            if i < len(chans) - 1:  # norm + relu between stages only
                if batchnorm:
                    layers.append(nn.BatchNorm3d(cout))
                layers.append(nn.ReLU(inplace=True))
            cin = cout
        self.net = nn.Sequential(*layers)
        core = resolution >> len(chans)
        self.out_dim = chans[-1] * core ** 3
        self.resolution = resolution

    def forward(self, x):
        return self.net(x).flatten(1)


class VolumeEncoder(nn.Module):
    """Maps a volume to a diagonal Gaussian over the latent section."""

    def __init__(self, resolution, latent_dim, base_channels=32, in_channels=1):
        super().__init__()
        self.trunk = ConvTrunk(resolution, in_channels, base_channels)
        self.fc_mu = nn.Linear(self.trunk.out_dim, latent_dim)
        self.fc_logvar = nn.Linear(self.trunk.out_dim, latent_dim)
        self.latent_dim = latent_dim

    def forward(self, x):
        h = self.trunk(x)
        return self.fc_mu(h), self.fc_logvar(h)


class VolumeDecoder(nn.Module):
    """Mirror of the encoder: latent to a sigmoid occupancy volume.

    Normalization between the transposed convs uses per-sample (instance)
    statistics: sampling decodes one latent at a time, so the decoder must
    behave identically for any batch composition. Running batch statistics
    fitted on posterior codes systematically mis-normalize prior draws.
    """

    def __init__(self, resolution, latent_dim, base_channels=32, out_channels=1):
        super().__init__()
        chans = stage_channels(resolution, base_channels)
        core = resolution >> len(chans)
        self.core_shape = (chans[-1], core, core, core)
        self.fc = nn.Linear(latent_dim, chans[-1] * core ** 3)
        layers = []
        rev = list(reversed(chans))
        for i in range(len(rev)):
            cin = rev[i]
            cout = rev[i + 1] if i + 1 < len(rev) else out_channels
            layers.append(nn.ConvTranspose3d(cin, cout, 4, stride=2, padding=1))
            if i < len(rev) - 1:
                layers.append(nn.InstanceNorm3d(cout, affine=True))
                layers.append(nn.ReLU(inplace=True))
        layers.append(nn.Sigmoid())
        self.net = nn.Sequential(*layers)
        self.latent_dim = latent_dim
        self.resolution = resolution

    def forward(self, z):
        h = self.fc(z).view(z.shape[0], *self.core_shape)
        return self.net(h)


class Discriminator(nn.Module):
    """Critic: encoder topology without batch norm, one unconstrained output."""

    def __init__(self, resolution, base_channels=32, in_channels=1):
        super().__init__()
        self.trunk = ConvTrunk(resolution, in_channels, base_channels, batchnorm=False)
        self.fc = nn.Linear(self.trunk.out_dim, 1)

    def forward(self, x):
        return self.fc(self.trunk(x)).squeeze(-1)


class AssemblerNet(nn.Module):
    """Regresses normalized per-part transforms from stacked part volumes.

    mode "neg-anchor" expects the anchor channel already encoded with -1
    occupancies; mode "one-hot" takes positive channels plus a K-length
    indicator appended to the trunk features.
    """

    MODES = ("neg-anchor", "one-hot")

    def __init__(self, resolution, num_parts, base_channels=32, mode="neg-anchor"):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.trunk = ConvTrunk(resolution, num_parts, base_channels)
        extra = num_parts if mode == "one-hot" else 0
        self.head = nn.Linear(self.trunk.out_dim + extra, 6 * num_parts)
        self.mode = mode
        self.num_parts = num_parts

    def forward(self, x, onehot=None):
        h = self.trunk(x)
        if self.mode == "one-hot":
            if onehot is None:
                raise ValueError("one-hot mode requires the anchor indicator")
            h = torch.cat([h, onehot], dim=1)
        return torch.sigmoid(self.head(h)).view(-1, self.num_parts, 6)


class ProjectorNet(nn.Module):
    """Whole-shape volume to a structured latent code of length K*d."""

    def __init__(self, resolution, num_parts, latent_dim, base_channels=32):
        super().__init__()
        self.trunk = ConvTrunk(resolution, 1, base_channels)
        self.fc = nn.Linear(self.trunk.out_dim, num_parts * latent_dim)
        self.num_parts = num_parts
        self.latent_dim = latent_dim

    def forward(self, x):
        return self.fc(self.trunk(x))


class ReflectCounter:
    """Counts reflection evaluations inside the loss path (test hook)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


reflect_calls = ReflectCounter()


def reflect_volume(x):
    """Mirror a [..., X, Y, Z] tensor about the x-axis bisector."""
    reflect_calls.count += 1
    return torch.flip(x, dims=(-3,))


def sample_z(mu, logvar, seed):
    """Reparameterized z = mu + exp(logvar/2) * eps with seeded eps."""
    gen = torch.Generator().manual_seed(seed)
    eps = torch.randn(mu.shape, generator=gen, dtype=mu.dtype)
    return mu + torch.exp(0.5 * logvar) * eps


def loss_recon(x_in, x_out):
    """Mean squared difference over all voxels."""
    if x_in.shape != x_out.shape:
        raise ValueError(f"shape mismatch: {tuple(x_in.shape)} vs {tuple(x_out.shape)}")
    return F.mse_loss(x_out, x_in)


def loss_kl(mu, logvar):
    """KL(q || N(0, I)) = 1/2 * sum(mu^2 + exp(logvar) - 1 - logvar)."""
    if mu.shape != logvar.shape:
        raise ValueError("mu/logvar shape mismatch")
    terms = 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar)
    if terms.ndim == 1:
        return terms.sum()
    return terms.sum(dim=-1).mean()


def loss_ref(x, delta_ref):
    """Per-sample gated MSE between a volume and its x-reflection.

    delta_ref is a scalar or a [B] tensor; rows with delta 0 never touch
    the reflection path at all.
    """
    delta = torch.as_tensor(delta_ref, dtype=x.dtype)
    if delta.ndim == 0:
        delta = delta.expand(x.shape[0])
    sel = delta != 0
    if not bool(sel.any()):
        return x.new_zeros(())
    xs = x[sel]
    per = ((xs - reflect_volume(xs)) ** 2).flatten(1).mean(dim=1)
    return (delta[sel] * per).sum() / x.shape[0]


def loss_adv(disc, real, fake, lam=10.0, seed=0):
    """WGAN-GP terms: (critic loss, generator term, gradient penalty).

    critic loss = E[D(fake)] - E[D(real)] + lam * E[(||grad D(x_hat)|| - 1)^2]
    with x_hat drawn uniformly on the real-fake segment per sample. The
    generator ascends the returned g_term = E[D(fake)].
    """
    if real.shape != fake.shape:
        raise ValueError("real/fake batch shape mismatch")
    b = real.shape[0]
    gen = torch.Generator().manual_seed(seed)
    u = torch.rand((b,) + (1,) * (real.ndim - 1), generator=gen, dtype=real.dtype)
    x_hat = (u * real + (1.0 - u) * fake).detach().requires_grad_(True)
    d_hat = disc(x_hat)
    if d_hat.requires_grad:
        grads = torch.autograd.grad(
            d_hat.sum(), x_hat, create_graph=True, retain_graph=True,
            allow_unused=True,
        )[0]
    else:  # a constant critic never touches its input
        grads = None
    if grads is None:
        grads = torch.zeros_like(x_hat)
    norms = grads.flatten(1).norm(2, dim=1)
    gp = ((norms - 1.0) ** 2).mean()
    g_term = disc(fake).mean()
    d_loss = g_term - disc(real).mean() + lam * gp
    return d_loss, g_term, gp


def partgen_loss(x_in, x_out, mu, logvar, g_term, delta_ref, cfg):
    """Full generator objective; the adversarial part enters as -alpha2*g_term."""
    total = loss_recon(x_in, x_out) + cfg.alpha1 * loss_kl(mu, logvar)
    total = total - cfg.alpha2 * g_term
    return total + loss_ref(x_out, delta_ref)


def warp_volumes(vols, scales, trans):
    """Differentiable scale-about-center-then-translate, trilinear.

    vols: [N, C, R, R, R]; scales/trans: [N, 3] in (x, y, z) axis order,
    translations in voxels. Matches voxgrid.apply_transform up to
    interpolation arithmetic.
    """
    n, _, r, _, _ = vols.shape
    t_n = 2.0 * trans / (r - 1)
    inv_s = 1.0 / scales
    theta = vols.new_zeros((n, 3, 4))
    # grid coordinate k multiplies output coords in (W, H, D) = (z, y, x) order
    for row, axis in enumerate((2, 1, 0)):
        theta[:, row, row] = inv_s[:, axis]
        theta[:, row, 3] = -t_n[:, axis] * inv_s[:, axis]
    grid = F.affine_grid(theta, vols.shape, align_corners=True)
    return F.grid_sample(vols, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=True)


def soft_union(part_vols):
    """Probabilistic union over the part channel: 1 - prod(1 - p)."""
    return 1.0 - torch.prod(1.0 - part_vols, dim=1)


def save_checkpoint(path, kind, state_dict, meta):
    payload = {"version": CHECKPOINT_VERSION, "kind": kind, "meta": dict(meta),
               "state_dict": state_dict}
    torch.save(payload, path)


def load_checkpoint(path, kind=None):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if "version" not in payload:
        raise ValueError(f"{path}: not a partforge checkpoint (no version field)")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload['version']}")
    if kind is not None and payload.get("kind") != kind:
        raise ValueError(f"{path}: expected a {kind!r} checkpoint, got {payload.get('kind')!r}")
    return payload
