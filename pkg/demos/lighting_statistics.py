"""How sharp is a lighting environment, and how does blurring change that?

Builds a procedural sky with one small sun, measures its Gini coefficient,
then prefilters it with cosine-power lobes of decreasing exponent.  A lower
exponent means a wider lobe, softer light and a smaller Gini.  The last part
maps a diffusion level t in [0, 1] back to the exponent that produces it.

Run:  python demos/lighting_statistics.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from lightdiffusion import hdrio
from lightdiffusion.envmap import (
    Lobe,
    ProceduralEnvSpec,
    diffuse_convolve,
    diffusion_parameter,
    exponent_for_gini,
    gen_procedural_env,
    gini,
    mean_radiance,
)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# A warm sun high on the right plus a dim blue ambient term.
spec = ProceduralEnvSpec(
    lobes=(Lobe((0.5, 0.7, 0.5), 0.05, 400.0, (1.0, 0.9, 0.75)),),
    ambient=0.15,
    height=32,
    width=64,
)
env = gen_procedural_env(spec, seed=0)
print(f"source map {env.radiance.shape}, Gini {gini(env):.4f}")
print("mean radiance", np.round(mean_radiance(env), 4))

# Wider lobes spread the sun over more texels; total energy does not move.
for n in (4096, 256, 32, 8, 1):
    blurred = diffuse_convolve(env, n)
    print(f"n = {n:5d}  Gini {gini(blurred):.4f}  mean {np.round(mean_radiance(blurred), 4)}")
    hdrio.write_png(out / f"env_n{n}.png", blurred.radiance / blurred.radiance.max())

# t = 0 is the n = 1 map, t = 1 the source.  In between, t interpolates Gini
# linearly and bisection recovers the exponent.
g_src, g_diff = gini(env), gini(diffuse_convolve(env, 1))
for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    target = g_diff + t * (g_src - g_diff)
    n = exponent_for_gini(env, target)
    check = diffusion_parameter(g_src, g_diff, target)
    print(f"t = {t:.2f} -> Gini {target:.4f} -> n = {n:8.2f} (round trip t = {check:.2f})")

print(f"previews in {out}/")
