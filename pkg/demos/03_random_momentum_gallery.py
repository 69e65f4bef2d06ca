"""Synthesize new images by shooting random momenta.

Builds a tiny library of momenta by matching one template bump to a few
shifted/scaled variants, then draws random momenta

    alpha = mean + (c / sqrt(n)) sum_k xi_k (alpha_k - mean)

and shoots each draw to render a gallery of synthetic variants.  Outputs land
in ./out_gallery/.
"""

import os

import numpy as np

from metamorph import SolverConfig, image_field, optimizer, sampler


def bump(size, cx, cy, sigma=3.0, amp=1.0):
    ax = np.arange(size, dtype=float)
    xx, yy = np.meshgrid(ax, ax)
    return image_field.ScalarField(
        amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    )


def main():
    size = 24
    template = bump(size, 11.0, 12.0)
    variants = [
        bump(size, 14.0, 12.0),
        bump(size, 11.0, 15.0),
        bump(size, 12.0, 11.0, amp=0.7),
        bump(size, 9.0, 12.0, sigma=3.6),
    ]
    config = SolverConfig()
    x0, m0 = image_field.sample_grid(template, stride=2)

    alphas = []
    for i, target in enumerate(variants):
        result = optimizer.run(
            template, target, x0, m0, config,
            optimizer.OptimOptions(max_iters=60, preconditioned=True, constrained=True),
        )
        print(f"variant {i}: {result.status.value}, "
              f"E -> {result.energy_history[-1]:.2e}")
        alphas.append(result.controls.alpha)

    momenta = sampler.MomentumSet(np.stack(alphas), x0, template_id="bump-library")
    os.makedirs("out_gallery", exist_ok=True)
    for seed in range(10):
        frame = sampler.shoot_sample(
            momenta, c=1.0, n=momenta.k, seed=seed,
            template=template, config=config, constrained=True,
        )
        path = f"out_gallery/sample_{seed:02d}.pgm"
        image_field.save(frame, path)
        print("wrote", path)


if __name__ == "__main__":
    main()
