"""Command-line entry point: match, shoot, render, sample.

Every run resolves its parameters from built-in defaults, then an optional
``--config`` JSON file, then explicit flags (highest precedence), and echoes
the fully-resolved configuration to ``config.json`` next to its outputs, so
any run can be reproduced from that file alone.  All commands are
deterministic given their flags.

Exit codes: 0 success (any finished optimization), 2 line-search failure,
1 I/O, schema or numeric errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import image_field, optimizer, renderer, sampler
from .adjoint_grad import ConditioningError
from .dynamics import Controls, DivergenceError, SolverConfig, shoot, write_trajectory_csv
from .kernels import Family, KernelParams

__all__ = ["main"]

_DEFAULTS = {
    "tau_v": 1.5,
    "tau_h": 0.5,
    "sigma": 1.0,
    "timesteps": 10,
    "stride": 1,
    "constrained": False,
    "precondition": False,
    "max_iters": 500,
    "grad_tol": 1e-6,
    "frames": 11,
    "gridlines": 0,
    "substeps": 1,
    "seed": 0,
    "c": None,
    "n": 0,  # 0 -> number of stored momenta
    "count": 1,
    "width": 0,  # 0 -> template size
    "height": 0,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="metamorph",
        description="Particle-based geodesic shooting for image metamorphosis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with defaults for any flag")
        p.add_argument("--out", help="output directory")
        p.add_argument("--tau-v", type=float, dest="tau_v", help="velocity kernel width")
        p.add_argument("--tau-h", type=float, dest="tau_h", help="intensity kernel width")
        p.add_argument("--sigma", type=float, help="intensity/deformation trade-off")
        p.add_argument("--timesteps", type=int, help="number of RK4 steps over [0,1]")

    p = sub.add_parser("match", help="estimate shooting momenta between two images")
    add_common(p)
    p.add_argument("--template", help="source image (PGM/PNG)")
    p.add_argument("--target", help="target image (PGM/PNG)")
    p.add_argument("--stride", type=int, help="particle grid stride in pixels")
    p.add_argument("--constrained", action=argparse.BooleanOptionalAction, default=None,
                   help="tie z0 to the template gradient")
    p.add_argument("--precondition", action=argparse.BooleanOptionalAction, default=None,
                   help="precondition gradients by the kernel Gram matrices")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")

    p = sub.add_parser("shoot", help="re-integrate stored momenta, write trajectory CSV")
    add_common(p)
    p.add_argument("momenta", nargs="?", help="momenta JSON written by match")
    p.add_argument("--template", help="template image (needed if the file lacks m0)")
    p.add_argument("--target", help="target image: report the endpoint energy")

    p = sub.add_parser("render", help="export frame sequences from stored momenta")
    add_common(p)
    p.add_argument("source", nargs="?", help="momenta JSON, or trajectory CSV with momenta.json sibling")
    p.add_argument("--template", help="template image (PGM/PNG)")
    p.add_argument("--frames", type=int, help="number of output frames")
    p.add_argument("--gridlines", type=int, help="grid-line spacing in pixels (0 = off)")
    p.add_argument("--substeps", type=int, help="flow integration refinement")
    p.add_argument("--width", type=int, help="output width (default: template)")
    p.add_argument("--height", type=int, help="output height (default: template)")

    p = sub.add_parser("sample", help="shoot random momenta drawn from a stored set")
    add_common(p)
    p.add_argument("momenta", nargs="?", help="momenta-set JSON")
    p.add_argument("--template", help="template image (PGM/PNG)")
    p.add_argument("--c", type=float, help="deviation scale of the draw (required)")
    p.add_argument("--n", type=int, help="normalization count (default: set size)")
    p.add_argument("--seed", type=int, help="seed of the first draw")
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--constrained", action=argparse.BooleanOptionalAction, default=None,
                   help="tie z0 to the template gradient")
    p.add_argument("--width", type=int, help="output width (default: template)")
    p.add_argument("--height", type=int, help="output height (default: template)")
    return parser


def _resolve(args, required=()):
    """Layer defaults < config file < explicit flags into one dict."""
    resolved = dict(_DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        for key, value in loaded.items():
            if key in ("command", "config"):
                continue
            resolved[key] = value
    for key, value in vars(args).items():
        if key == "config" or value is None:
            continue
        resolved[key] = value
    resolved["command"] = args.command
    missing = [key for key in ("out", *required) if resolved.get(key) is None]
    if missing:
        raise ValueError(f"missing required argument(s): {', '.join(missing)}")
    return resolved


def _solver_config(cfg):
    return SolverConfig(
        sigma=float(cfg["sigma"]),
        timesteps=int(cfg["timesteps"]),
        kernel_v=KernelParams(float(cfg["tau_v"]), Family.V),
        kernel_h=KernelParams(float(cfg["tau_h"]), Family.H),
    )


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def _check_params_match(args, mf):
    """Explicit solver flags must agree with the parameters stored in the file."""
    stored = {
        "tau_v": mf.config.kernel_v.tau,
        "tau_h": mf.config.kernel_h.tau,
        "sigma": mf.config.sigma,
        "timesteps": mf.config.timesteps,
    }
    for key, have in stored.items():
        want = getattr(args, key, None)
        if want is not None and not np.isclose(want, have):
            raise ValueError(
                f"--{key.replace('_', '-')}={want} conflicts with momenta file ({key}={have})"
            )


def _load_template(cfg, key="template"):
    return image_field.load(cfg[key])


def _render_config(cfg, template):
    return renderer.RenderConfig(
        out_width=int(cfg["width"]) or template.width,
        out_height=int(cfg["height"]) or template.height,
        frames=int(cfg["frames"]),
        gridline_stride=int(cfg["gridlines"]),
        substeps=int(cfg["substeps"]),
    )


def cmd_match(args) -> int:
    cfg = _resolve(args, required=("template", "target"))
    _echo_config(cfg, cfg["out"])
    template = _load_template(cfg)
    target = image_field.load(cfg["target"])
    solver = _solver_config(cfg)
    x0, m0 = image_field.sample_grid(template, int(cfg["stride"]))
    opts = optimizer.OptimOptions(
        max_iters=int(cfg["max_iters"]),
        grad_tol=float(cfg["grad_tol"]),
        constrained=bool(cfg["constrained"]),
        preconditioned=bool(cfg["precondition"]),
    )
    log_path = os.path.join(cfg["out"], "iterations.ndjson")
    with open(log_path, "w", encoding="utf-8") as log:
        result = optimizer.run(template, target, x0, m0, solver, opts, log_stream=log)
    sampler.save_momenta(
        os.path.join(cfg["out"], "momenta.json"),
        x0,
        result.controls.alpha[None, :],
        solver,
        template_id=os.path.basename(str(cfg["template"])),
        m0=m0,
        z0s=result.controls.z0[None, :, :],
    )
    diag = optimizer.diagnostics(result, template, target, x0, m0, solver)
    with open(os.path.join(cfg["out"], "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=2)
    print(
        f"match: {result.status.value} after {result.iterations} iterations, "
        f"energy {diag['initial_energy']:.6g} -> {diag['energy']:.6g}"
    )
    return 2 if result.status is optimizer.OptimStatus.line_search_failed else 0


def _controls_from_file(mf, template=None):
    alpha = mf.alphas[0]
    z0 = mf.z0s[0] if mf.z0s is not None else np.zeros_like(mf.x0)
    if mf.m0 is not None:
        m0 = mf.m0
    elif template is not None:
        m0 = image_field.eval(template, mf.x0)
    else:
        raise ValueError("momenta file lacks m0; pass --template")
    return Controls(alpha, z0), m0


def cmd_shoot(args) -> int:
    cfg = _resolve(args, required=("momenta",))
    mf = sampler.load_momenta(cfg["momenta"])
    _check_params_match(args, mf)
    _echo_config(cfg, cfg["out"])
    template = image_field.load(cfg["template"]) if cfg.get("template") else None
    controls, m0 = _controls_from_file(mf, template)
    traj = shoot(mf.x0, m0, controls, mf.config)
    csv_path = os.path.join(cfg["out"], "trajectory.csv")
    write_trajectory_csv(traj, csv_path)
    message = f"shoot: wrote {csv_path}"
    if cfg.get("target"):
        from .adjoint_grad import bc_residual_of, energy

        target = image_field.load(cfg["target"])
        diag = {
            "energy": energy(traj, target),
            "max_bc_residual": float(bc_residual_of(traj, controls.alpha, target).max()),
        }
        with open(os.path.join(cfg["out"], "diagnostics.json"), "w", encoding="utf-8") as fh:
            json.dump(diag, fh, indent=2)
        message += f", energy {diag['energy']:.6g}"
    print(message)
    return 0


def cmd_render(args) -> int:
    cfg = _resolve(args, required=("source", "template"))
    source = cfg["source"]
    if source.endswith(".csv"):
        sibling = os.path.join(os.path.dirname(source) or ".", "momenta.json")
        if not os.path.exists(sibling):
            raise ValueError(f"{source}: rendering a CSV needs {sibling} for momenta/parameters")
        source = sibling
    mf = sampler.load_momenta(source)
    _check_params_match(args, mf)
    _echo_config(cfg, cfg["out"])
    template = _load_template(cfg)
    controls, m0 = _controls_from_file(mf, template)
    traj = shoot(mf.x0, m0, controls, mf.config)
    render_cfg = _render_config(cfg, template)
    paths = renderer.export_sequence(traj, template, controls.alpha, render_cfg, cfg["out"])
    print(f"render: wrote {len(paths)} files to {cfg['out']}")
    return 0


def cmd_sample(args) -> int:
    cfg = _resolve(args, required=("momenta", "template", "c"))
    mf = sampler.load_momenta(cfg["momenta"])
    _check_params_match(args, mf)
    _echo_config(cfg, cfg["out"])
    template = _load_template(cfg)
    mset = mf.momentum_set()
    n = int(cfg["n"]) or mset.k
    render_cfg = renderer.RenderConfig(
        out_width=int(cfg["width"]) or template.width,
        out_height=int(cfg["height"]) or template.height,
        frames=1,
        substeps=int(cfg["substeps"]),
    )
    for i in range(int(cfg["count"])):
        frame = sampler.shoot_sample(
            mset,
            float(cfg["c"]),
            n,
            int(cfg["seed"]) + i,
            template,
            mf.config,
            constrained=bool(cfg["constrained"]),
            render=render_cfg,
        )
        image_field.save(frame, os.path.join(cfg["out"], f"sample_{i:04d}.pgm"))
    print(f"sample: wrote {int(cfg['count'])} frames to {cfg['out']}")
    return 0


_COMMANDS = {
    "match": cmd_match,
    "shoot": cmd_shoot,
    "render": cmd_render,
    "sample": cmd_sample,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        OSError,
        ValueError,
        image_field.ImageFormatError,
        DivergenceError,
        ConditioningError,
    ) as exc:
        print(f"metamorph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
