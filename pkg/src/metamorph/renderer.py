"""Frame reconstruction from a stored trajectory.

Three views of the morph (all 2-D):

* ``template_frame``: the evolving template m(t) seen at material points —
  each query point is advected forward along the velocity field while the
  intensity change is accumulated.  The advection re-runs the particle
  integrator and evaluates the fields at its RK4 stage states, so a query
  point sitting on a particle reproduces that particle's stored intensity to
  roundoff.
* ``deformed_frame``: the deformed image q(t) = m(t) o phi(t)^{-1} — each
  output pixel is traced backward along the flow (characteristics), sampling
  the template at the foot point and accumulating the intensity change along
  the way.  Between stored steps the particle states are interpolated
  linearly in time; ``substeps`` refines the tracing step.
* ``gridlines_frame``: coordinate lines advected forward and rasterized as
  dark 1-pixel polylines on white, multiplicatively composable with the
  deformed frames.

``export_sequence`` writes evenly spaced frames of the first two kinds (plus
gridlines when enabled) together with the trajectory CSV.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import image_field
from .dynamics import (
    DivergenceError,
    ParticleState,
    SolverConfig,
    Trajectory,
    _rhs_arrays,
    fields_at,
    velocity_at,
    write_trajectory_csv,
)

__all__ = [
    "RenderConfig",
    "template_frame",
    "deformed_frame",
    "gridlines_frame",
    "export_sequence",
    "advect",
    "lagrangian_values",
]


@dataclass(frozen=True)
class RenderConfig:
    """Output raster size, frame count and flow-integration refinement."""

    out_width: int
    out_height: int
    frames: int = 11
    gridline_stride: int = 0
    substeps: int = 1

    def __post_init__(self):
        if self.out_width < 1 or self.out_height < 1:
            raise ValueError("output size must be at least 1x1")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if self.gridline_stride < 0:
            raise ValueError("gridline_stride must be >= 0 (0 disables)")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def _interp_state(traj: Trajectory, s):
    """Particle positions and momenta at continuous time s by linear
    interpolation between the nearest stored steps."""
    t_max = traj.timesteps
    idx = s / traj.dt
    i = int(np.clip(np.floor(idx + 1e-12), 0, t_max - 1))
    w = idx - i
    a, b = traj.states[i], traj.states[i + 1]
    x = (1.0 - w) * a.x + w * b.x
    z = (1.0 - w) * a.z + w * b.z
    return ParticleState(x, np.zeros(x.shape[0]), z)


def advect(traj: Trajectory, points, t_from, t_to, substeps=1, alpha=None):
    """Trace ``points`` along the flow from step index t_from to t_to.

    Uses RK4 on the time-interpolated particle states; either time direction
    is allowed.  Returns ``(positions, acc)`` where ``acc`` is the signed
    line integral of the intensity rate along each path (zero when ``alpha``
    is None, in which case the intensity field is not evaluated).
    """
    cfg = traj.config
    y = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    acc = np.zeros(y.shape[0])
    n_steps = abs(t_to - t_from) * substeps
    if n_steps == 0:
        return y, acc
    h = (t_to - t_from) * traj.dt / n_steps
    carry_alpha = None if alpha is None else np.atleast_1d(np.asarray(alpha, dtype=float))

    def field(s, pts):
        state = _interp_state(traj, s)
        if carry_alpha is None:
            return velocity_at(state, pts, cfg), 0.0
        return fields_at(state, pts, carry_alpha, cfg)

    s = t_from * traj.dt
    for _ in range(n_steps):
        v1, r1 = field(s, y)
        v2, r2 = field(s + 0.5 * h, y + 0.5 * h * v1)
        v3, r3 = field(s + 0.5 * h, y + 0.5 * h * v2)
        v4, r4 = field(s + h, y + h * v3)
        y = y + (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        acc = acc + (h / 6.0) * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
        s += h
        if not np.all(np.isfinite(y)):
            raise DivergenceError(int(round(s / traj.dt)), "advection diverged")
    return y, acc


def lagrangian_values(traj: Trajectory, template, alpha, points, t_indices):
    """Material intensities q0(y0) + int zeta along forward paths.

    Re-integrates the particle system with the trajectory's own RK4 steps and
    advects the query points against the stage states, i.e. the exact
    quadrature of the forward integrator.  Returns an array of shape
    (len(t_indices), M) with the values at each requested step index.
    """
    cfg = traj.config
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    t_indices = [int(t) for t in t_indices]
    if any(t < 0 or t > traj.timesteps for t in t_indices):
        raise ValueError(f"frame indices {t_indices} outside 0..{traj.timesteps}")
    start = traj.states[0]
    x, m, z = start.x.copy(), start.m.copy(), start.z.copy()
    y = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    vals = np.asarray(image_field.eval(template, y), dtype=float).copy()
    h = traj.dt
    out = np.empty((len(t_indices), y.shape[0]))
    for slot, t in enumerate(t_indices):
        if t == 0:
            out[slot] = vals
    last = max(t_indices, default=0)
    for step in range(last):
        # particle stages (identical arithmetic to dynamics.shoot) ...
        kx1, km1, kz1 = _rhs_arrays(x, m, z, alpha, cfg)
        x2, z2 = x + 0.5 * h * kx1, z + 0.5 * h * kz1
        kx2, km2, kz2 = _rhs_arrays(x2, m + 0.5 * h * km1, z2, alpha, cfg)
        x3, z3 = x + 0.5 * h * kx2, z + 0.5 * h * kz2
        kx3, km3, kz3 = _rhs_arrays(x3, m + 0.5 * h * km2, z3, alpha, cfg)
        x4, z4 = x + h * kx3, z + h * kz3
        kx4, km4, kz4 = _rhs_arrays(x4, m + h * km3, z4, alpha, cfg)
        # ... drive the tracer stages with the matching stage states
        v1, r1 = fields_at(ParticleState(x, m, z), y, alpha, cfg)
        v2, r2 = fields_at(ParticleState(x2, m, z2), y + 0.5 * h * v1, alpha, cfg)
        v3, r3 = fields_at(ParticleState(x3, m, z3), y + 0.5 * h * v2, alpha, cfg)
        v4, r4 = fields_at(ParticleState(x4, m, z4), y + h * v3, alpha, cfg)
        c = h / 6.0
        x = x + c * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4)
        m = m + c * (km1 + 2.0 * km2 + 2.0 * km3 + km4)
        z = z + c * (kz1 + 2.0 * kz2 + 2.0 * kz3 + kz4)
        y = y + c * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        vals = vals + c * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
        if not np.all(np.isfinite(y)):
            raise DivergenceError(step, "tracer advection diverged")
        for slot, t in enumerate(t_indices):
            if t == step + 1:
                out[slot] = vals
    return out


def template_frame(traj: Trajectory, template, alpha, t_index, points):
    """Evolving template m(t) at the given material points."""
    return lagrangian_values(traj, template, alpha, points, [t_index])[0]


def _output_grid(template, out: RenderConfig):
    """Physical centers of the output pixels, mapped over the template extent."""
    sx = (template.width - 1) / max(out.out_width - 1, 1)
    sy = (template.height - 1) / max(out.out_height - 1, 1)
    ii, jj = np.meshgrid(np.arange(out.out_width), np.arange(out.out_height))
    pts = np.stack(
        [
            template.origin[0] + template.spacing * sx * ii.ravel(),
            template.origin[1] + template.spacing * sy * jj.ravel(),
        ],
        axis=1,
    )
    return pts, template.spacing * sx


def deformed_frame(traj: Trajectory, template, alpha, t_index, out: RenderConfig):
    """Deformed image q(t) = m(t) o phi(t)^{-1} rasterized on the output grid."""
    t_index = int(t_index)
    if not 0 <= t_index <= traj.timesteps:
        raise ValueError(f"t_index {t_index} outside 0..{traj.timesteps}")
    pts, out_spacing = _output_grid(template, out)
    feet, acc = advect(traj, pts, t_index, 0, substeps=out.substeps, alpha=alpha)
    # acc is the integral from t down to 0; the accumulated intensity is its negative
    vals = image_field.eval(template, feet) - acc
    return image_field.ScalarField(
        vals.reshape(out.out_height, out.out_width), out_spacing, template.origin.copy()
    )


def _draw_segment(canvas, p, q):
    """1-pixel Bresenham segment between raster points p and q (in-bounds only)."""
    h, w = canvas.shape
    x0, y0 = int(round(p[0])), int(round(p[1]))
    x1, y1 = int(round(q[0])), int(round(q[1]))
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if 0 <= x0 < w and 0 <= y0 < h:
            canvas[y0, x0] = 0.0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def gridlines_frame(traj: Trajectory, t_index, out: RenderConfig):
    """Coordinate grid advected to time t, rasterized dark-on-white.

    Lines are laid out every ``gridline_stride`` pixels of the output canvas
    (treated as the physical domain at unit spacing), sampled every pixel
    pre-warp.  ``gridline_stride`` 0 disables and returns an all-white field.
    """
    canvas = np.ones((out.out_height, out.out_width))
    stride = out.gridline_stride
    if stride == 0:
        return image_field.ScalarField(canvas)
    w, h = out.out_width, out.out_height
    polylines = []
    for gx in range(0, w, stride):
        ys = np.arange(0.0, h - 1 + 1e-9)
        polylines.append(np.stack([np.full_like(ys, float(gx)), ys], axis=1))
    for gy in range(0, h, stride):
        xs = np.arange(0.0, w - 1 + 1e-9)
        polylines.append(np.stack([xs, np.full_like(xs, float(gy))], axis=1))
    lengths = [len(p) for p in polylines]
    samples = np.concatenate(polylines, axis=0)
    warped, _ = advect(traj, samples, 0, int(t_index), substeps=out.substeps)
    offset = 0
    for length in lengths:
        line = warped[offset : offset + length]
        offset += length
        for a, b in zip(line[:-1], line[1:]):
            _draw_segment(canvas, a, b)
    return image_field.ScalarField(canvas)


def frame_indices(timesteps, frames):
    """Evenly spaced stored-step indices for ``frames`` output frames."""
    if frames > timesteps + 1:
        raise ValueError(f"frames={frames} exceeds stored steps + 1 = {timesteps + 1}")
    if frames == 1:
        return [0]
    return [int(round(i * timesteps / (frames - 1))) for i in range(frames)]


def export_sequence(traj: Trajectory, template, alpha, out: RenderConfig, directory):
    """Write template/deformed (and optional gridline) frames plus the CSV.

    Frame files are named ``template_NNNN.pgm``, ``deformed_NNNN.pgm`` and
    ``gridlines_NNNN.pgm`` with NNNN counting output frames from 0; rerunning
    with identical inputs produces byte-identical files.
    """
    os.makedirs(directory, exist_ok=True)
    indices = frame_indices(traj.timesteps, out.frames)
    paths = []

    grid_pts, _ = _output_grid(template, out)
    tpl_vals = lagrangian_values(traj, template, alpha, grid_pts, indices)
    for frame, vals in enumerate(tpl_vals):
        path = os.path.join(directory, f"template_{frame:04d}.pgm")
        image_field.save(
            image_field.ScalarField(vals.reshape(out.out_height, out.out_width)), path
        )
        paths.append(path)

    for frame, t_idx in enumerate(indices):
        path = os.path.join(directory, f"deformed_{frame:04d}.pgm")
        image_field.save(deformed_frame(traj, template, alpha, t_idx, out), path)
        paths.append(path)

    if out.gridline_stride >= 1:
        for frame, t_idx in enumerate(indices):
            path = os.path.join(directory, f"gridlines_{frame:04d}.pgm")
            image_field.save(gridlines_frame(traj, t_idx, out), path)
            paths.append(path)

    csv_path = os.path.join(directory, "trajectory.csv")
    write_trajectory_csv(traj, csv_path)
    paths.append(csv_path)
    return paths
