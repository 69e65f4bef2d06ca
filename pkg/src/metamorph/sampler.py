"""Random-momentum image synthesis.

Given K scalar momenta learned by matching one template to K targets, new
momenta are drawn as

    alpha = mean + (c / sqrt(n)) * sum_k xi_k (alpha_k - mean)

with independent standard Gaussians xi_k.  With c = 1 and n = K the
covariance of the draw equals the empirical covariance of the stored momenta
(normalized by K), which is why n defaults to K.

Gaussians are produced by Box-Muller applied to uniforms from a seeded PCG64
stream, so a (seed, K) pair yields the same draw on every platform — the
sequence is pinned down to the exact transform, not just the generator.

Momenta travel with the particle grid and solver parameters that produced
them; the JSON container in this module is shared with the command-line
tools.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import image_field, renderer
from .dynamics import Controls, SolverConfig, shoot
from .kernels import Family, KernelParams

__all__ = [
    "MomentumSet",
    "MomentaFile",
    "mean",
    "gaussian_draws",
    "sample",
    "shoot_sample",
    "save_momenta",
    "load_momenta",
]

FORMAT_NAME = "metamorph-momenta"
FORMAT_VERSION = 1


@dataclass
class MomentumSet:
    """K scalar momenta over one shared particle grid."""

    alphas: np.ndarray
    x0: np.ndarray
    template_id: str = ""

    def __post_init__(self):
        self.alphas = np.atleast_2d(np.asarray(self.alphas, dtype=float))
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=float))
        if self.alphas.shape[0] < 1:
            raise ValueError("need at least one stored momentum")
        if self.alphas.shape[1] != self.x0.shape[0]:
            raise ValueError(
                f"momenta are length {self.alphas.shape[1]} but grid has {self.x0.shape[0]} points"
            )

    @property
    def k(self):
        return self.alphas.shape[0]

    @property
    def n_particles(self):
        return self.alphas.shape[1]


def mean(momenta: MomentumSet):
    """Arithmetic mean of the stored momenta."""
    return momenta.alphas.mean(axis=0)


def gaussian_draws(seed, count):
    """``count`` standard normals via Box-Muller over a PCG64 uniform stream."""
    gen = np.random.Generator(np.random.PCG64(int(seed)))
    pairs = (count + 1) // 2
    u = gen.random(2 * pairs)
    u1 = 1.0 - u[0::2]  # (0, 1]: keeps the log finite
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(2.0 * np.pi * u2)
    out[1::2] = radius * np.sin(2.0 * np.pi * u2)
    return out[:count]


def sample(momenta: MomentumSet, c, n, seed):
    """One random momentum: mean + (c/sqrt(n)) sum_k xi_k (alpha_k - mean)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    avg = mean(momenta)
    xi = gaussian_draws(seed, momenta.k)
    return avg + (c / np.sqrt(n)) * ((momenta.alphas - avg).T @ xi)


def shoot_sample(
    momenta: MomentumSet,
    c,
    n,
    seed,
    template: image_field.ScalarField,
    config: SolverConfig,
    constrained=False,
    render: renderer.RenderConfig | None = None,
):
    """Draw a momentum, shoot it and render the final deformed frame."""
    alpha = sample(momenta, c, n, seed)
    x0 = momenta.x0
    m0 = image_field.eval(template, x0)
    if constrained:
        z0 = -alpha[:, None] * image_field.grad(template, x0)
    else:
        z0 = np.zeros_like(x0)
    traj = shoot(x0, m0, Controls(alpha, z0), config)
    render = render or renderer.RenderConfig(template.width, template.height)
    return renderer.deformed_frame(traj, template, alpha, traj.timesteps, render)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


@dataclass
class MomentaFile:
    """Momenta plus everything needed to re-shoot them."""

    x0: np.ndarray
    alphas: np.ndarray
    config: SolverConfig
    template_id: str = ""
    m0: np.ndarray | None = None
    z0s: np.ndarray | None = None

    def momentum_set(self):
        return MomentumSet(self.alphas, self.x0, self.template_id)


def save_momenta(path, x0, alphas, config: SolverConfig, template_id="", m0=None, z0s=None):
    """Write momenta with their grid and solver parameters as UTF-8 JSON."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "template_id": str(template_id),
        "params": {
            "tau_v": config.kernel_v.tau,
            "tau_h": config.kernel_h.tau,
            "sigma": config.sigma,
            "timesteps": config.timesteps,
        },
        "x0": x0.tolist(),
        "alphas": alphas.tolist(),
        "m0": None if m0 is None else np.asarray(m0, dtype=float).tolist(),
        "z0s": None if z0s is None else np.asarray(z0s, dtype=float).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_momenta(path) -> MomentaFile:
    """Read a momenta JSON file, validating schema and shapes."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    try:
        params = doc["params"]
        config = SolverConfig(
            sigma=float(params["sigma"]),
            timesteps=int(params["timesteps"]),
            kernel_v=KernelParams(float(params["tau_v"]), Family.V),
            kernel_h=KernelParams(float(params["tau_h"]), Family.H),
        )
        x0 = np.asarray(doc["x0"], dtype=float)
        alphas = np.atleast_2d(np.asarray(doc["alphas"], dtype=float))
        m0 = None if doc.get("m0") is None else np.asarray(doc["m0"], dtype=float)
        z0s = None if doc.get("z0s") is None else np.asarray(doc["z0s"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed momenta file ({exc})") from exc
    if x0.ndim != 2 or alphas.shape[1] != x0.shape[0]:
        raise ValueError(f"{path}: momenta and grid shapes disagree")
    if z0s is not None and z0s.shape != (alphas.shape[0],) + x0.shape:
        raise ValueError(f"{path}: z0 block has wrong shape {z0s.shape}")
    if m0 is not None and m0.shape != (x0.shape[0],):
        raise ValueError(f"{path}: m0 has wrong shape {m0.shape}")
    return MomentaFile(
        x0=x0,
        alphas=alphas,
        config=config,
        template_id=doc.get("template_id", ""),
        m0=m0,
        z0s=z0s,
    )
