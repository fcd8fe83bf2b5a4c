"""Desk-scale synthetic live/spoof clips with controllable domains and attack types.

Live clips render a smooth analytic texture, shaded by a depth bump, that moves with
depth-dependent parallax. Spoof clips show a recaptured flat copy of such a face: lower
contrast, a colour cast, a type-specific artifact and purely planar motion.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import DomainDataset
from .tensor import ConfigError

__all__ = ["Photometric", "TaskSpec", "DEFAULT_DOMAINS", "ATTACK_TYPES", "gen_dataset", "render_sample"]

ATTACK_TYPES = ("lattice", "noise", "blur-flat")


@dataclass(frozen=True)
class Photometric:
    """Per-domain camera/illumination transform: ``tint * (x + brightness) ** gamma + N(0, noise)``.

    ``medium`` is the colour rendering of the recapture media (prints, screens) found in this
    domain; it only touches spoof clips.
    """

    name: str
    gamma: float = 1.0
    brightness: float = 0.0
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise: float = 0.01
    medium: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def apply(self, frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.clip(frames + self.brightness, 0.0, 1.0) ** self.gamma
        x = x * np.asarray(self.tint, dtype=np.float64)[:, None, None]
        if self.noise > 0:
            x = x + rng.normal(0.0, self.noise, size=x.shape)
        return np.clip(x, 0.0, 1.0)


DEFAULT_DOMAINS = (
    Photometric("indoor", 1.0, 0.0, (1.0, 1.0, 1.0), 0.01, (1.06, 1.0, 0.84)),
    Photometric("warm", 0.8, 0.05, (1.08, 1.0, 0.88), 0.02, (0.92, 1.0, 1.14)),
    Photometric("cool", 1.25, -0.05, (0.9, 1.0, 1.1), 0.03, (1.0, 0.9, 1.04)),
)


@dataclass(frozen=True)
class TaskSpec:
    resolution: int = 64
    frames: int = 7
    n_per_class: int = 24
    domains: tuple[Photometric, ...] = DEFAULT_DOMAINS
    attack_types: tuple[str, ...] = ATTACK_TYPES
    seed: int = 0
    # generator knobs
    parallax: float = 2.0
    drift: float = 0.6
    artifact: float = 0.05
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution <= 0 or self.resolution % 8:
            raise ConfigError(f"resolution must be a positive multiple of 8, got {self.resolution}")
        if self.frames < 2:
            raise ConfigError("clips need at least two frames")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be positive")
        if not self.domains:
            raise ConfigError("at least one domain is required")
        if not self.attack_types:
            raise ConfigError("at least one attack type is required")
        bad = set(self.attack_types) - set(ATTACK_TYPES)
        if bad:
            raise ConfigError(f"unknown attack types {sorted(bad)}; choose from {ATTACK_TYPES}")
        if len(set(d.name for d in self.domains)) != len(self.domains):
            raise ConfigError("domain names must be unique")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domains"] = [asdict(p) for p in self.domains]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        if "domains" in d:
            d["domains"] = tuple(Photometric(**{**p, "tint": tuple(p.get("tint", (1, 1, 1))),
                                                  "medium": tuple(p.get("medium", (1, 1, 1)))}) for p in d["domains"])
        if "attack_types" in d:
            d["attack_types"] = tuple(d["attack_types"])
        return cls(**d)


# ---------------------------------------------------------------------------
# analytic scene
# ---------------------------------------------------------------------------

@dataclass
class _Scene:
    base: np.ndarray          # (3,)
    freqs: np.ndarray         # (M, 2) cycles per image
    phases: np.ndarray        # (M,)
    amps: np.ndarray          # (M, 3)
    center: np.ndarray        # (2,) pixels (y, x)
    sigma: np.ndarray         # (2,) pixels
    light: np.ndarray         # (3,) unit vector


def _scene(rng: np.random.Generator, s: int) -> _Scene:
    m_low, m_high = 6, 6
    radius = np.concatenate([rng.uniform(0.5, 3.0, m_low), rng.uniform(9.0, 14.0, m_high)])
    angle = rng.uniform(0, 2 * np.pi, m_low + m_high)
    freqs = np.stack([radius * np.sin(angle), radius * np.cos(angle)], axis=1)
    lum = np.concatenate([rng.uniform(0.03, 0.07, m_low), rng.uniform(0.012, 0.02, m_high)])
    amps = lum[:, None] * (1.0 + rng.normal(0, 0.15, (m_low + m_high, 3)))
    base = np.array([0.62, 0.47, 0.38]) * (1 + rng.normal(0, 0.02)) + rng.normal(0, 0.01, 3)
    light = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), 1.0])
    return _Scene(base=base, freqs=freqs, phases=rng.uniform(0, 2 * np.pi, len(freqs)), amps=amps,
                  center=s / 2 + rng.uniform(-s / 10, s / 10, 2), sigma=s * rng.uniform(0.18, 0.26, 2),
                  light=light / np.linalg.norm(light))


def _texture(sc: _Scene, y: np.ndarray, x: np.ndarray, s: int, blur: float = 0.0) -> np.ndarray:
    """(3, H, W) texture at real-valued coordinates; ``blur`` is a Gaussian sigma in pixels."""
    out = np.broadcast_to(sc.base[:, None, None], (3,) + y.shape).copy()
    for f, ph, a in zip(sc.freqs, sc.phases, sc.amps):
        gain = np.exp(-2 * np.pi**2 * blur**2 * (f @ f) / s**2) if blur else 1.0
        wave = np.sin(2 * np.pi * (f[0] * y + f[1] * x) / s + ph)
        out += (gain * a)[:, None, None] * wave
    return out


def _bump(sc: _Scene, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.exp(-((y - sc.center[0]) ** 2 / (2 * sc.sigma[0] ** 2) + (x - sc.center[1]) ** 2 / (2 * sc.sigma[1] ** 2)))


def _shading(sc: _Scene, y: np.ndarray, x: np.ndarray, relief: float = 12.0) -> np.ndarray:
    d = _bump(sc, y, x)
    dy = -d * (y - sc.center[0]) / sc.sigma[0] ** 2
    dx = -d * (x - sc.center[1]) / sc.sigma[1] ** 2
    n = np.stack([-relief * dx, -relief * dy, np.ones_like(d)])
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    lambert = np.tensordot(sc.light, n, axes=1)
    return 0.55 + 0.45 * np.clip(lambert, 0, 1)


def _normalize(d: np.ndarray) -> np.ndarray:
    lo, hi = d.min(), d.max()
    return (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)


def _trajectory(rng: np.random.Generator, k: int, scale: float) -> np.ndarray:
    """(K, 2) random-walk offsets, zero at the middle frame."""
    steps = rng.normal(0, scale, (k, 2))
    path = np.cumsum(steps, axis=0)
    return path - path[k // 2]


def render_sample(spec: TaskSpec, live: bool, attack: str | None, domain: Photometric,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One clip ``(K, 3, S, S)`` in [0, 1] and its ``(S, S)`` depth target."""
    s, k = spec.resolution, spec.frames
    sc = _scene(rng, s)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    drift = _trajectory(rng, k, spec.drift)
    frames = np.empty((k, 3, s, s))
    if live:
        depth = _normalize(_bump(sc, yy, xx))
        pdir = rng.normal(0, 1, 2)
        pdir *= spec.parallax / (np.linalg.norm(pdir) + 1e-12)
        ramp = np.linspace(-0.5, 0.5, k)
        for t in range(k):
            shift = drift[t][:, None, None] + ramp[t] * pdir[:, None, None] * depth[None]
            qy, qx = yy - shift[0], xx - shift[1]
            frames[t] = _texture(sc, qy, qx, s) * _shading(sc, qy, qx)[None]
    else:
        depth = np.zeros((s, s))
        contrast = rng.uniform(0.72, 0.85)
        cast = np.asarray(domain.medium) * (1 + rng.normal(0, 0.01, 3))
        period = rng.uniform(3.0, 4.5)
        lat_phase = rng.uniform(0, 2 * np.pi, 2)
        canvas = rng.normal(0, 1, (s + 16, s + 16))
        for t in range(k):
            qy, qx = yy - drift[t][0], xx - drift[t][1]
            if attack == "blur-flat":
                photo = _texture(sc, qy, qx, s, blur=1.6) * 0.85
            else:
                photo = _texture(sc, qy, qx, s) * _shading(sc, qy, qx)[None]
            photo = 0.5 + contrast * (photo - 0.5)
            photo = photo * cast[:, None, None]
            if attack == "lattice":
                grid = np.cos(2 * np.pi * qy / period + lat_phase[0]) + np.cos(2 * np.pi * qx / period + lat_phase[1])
                photo = photo + 0.5 * spec.artifact * grid[None]
            elif attack == "noise":
                iy = np.clip(np.rint(qy).astype(int) + 8, 0, s + 15)
                ix = np.clip(np.rint(qx).astype(int) + 8, 0, s + 15)
                photo = photo + spec.artifact * canvas[iy, ix][None]
            frames[t] = photo
    frames = domain.apply(np.clip(frames, 0, 1), rng)
    return frames.astype(np.float32), depth.astype(np.float32)


def gen_dataset(spec: TaskSpec) -> DomainDataset:
    """Balanced clips for every domain: ``n_per_class`` live and ``n_per_class`` spoof.

    Spoof samples cycle through the attack types; each sample has its own seed stream
    derived from ``(seed, domain, index)``.
    """
    clips, depths, labels, domains, types = [], [], [], [], []
    for d_idx, dom in enumerate(spec.domains):
        for i in range(2 * spec.n_per_class):
            live = i < spec.n_per_class
            attack = None if live else spec.attack_types[(i - spec.n_per_class) % len(spec.attack_types)]
            rng = np.random.default_rng([spec.seed, d_idx, i])
            clip, depth = render_sample(spec, live, attack, dom, rng)
            clips.append(clip)
            depths.append(depth)
            labels.append(1 if live else 0)
            domains.append(d_idx)
            types.append(0 if live else 1 + spec.attack_types.index(attack))
    return DomainDataset(
        clips=np.stack(clips), depth=np.stack(depths), labels=np.asarray(labels, dtype=np.int64),
        domains=np.asarray(domains, dtype=np.int64), types=np.asarray(types, dtype=np.int64),
        domain_names=tuple(d.name for d in spec.domains), type_names=("live",) + tuple(spec.attack_types),
    )
