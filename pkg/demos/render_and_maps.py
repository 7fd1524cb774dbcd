"""Render a bust, light-diffuse it, and split the difference into S/D maps.

The specular map S marks where the original render is brighter than its
diffused version and the shadow map D where it is darker.  From the original
and the two maps the diffused luminance can be rebuilt.  The second half
drops a leafy shadow on the subject, which is the augmentation used to teach
the networks about cast shadows from outside the frame.

Run:  python demos/render_and_maps.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from lightdiffusion import hdrio
from lightdiffusion.envmap import Lobe, ProceduralEnvSpec, gen_procedural_env, gini, luminance
from lightdiffusion.maps import compute_spec_shadow, reconstruct_diffuse
from lightdiffusion.renderer import SceneSpec, build_scene, render_diffused, render_env
from lightdiffusion.shadowaug import apply_external_shadow, project_shadow_mask, sample_silhouette

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
res = (96, 96)

scene = build_scene(SceneSpec(geometry="bust", albedo_pattern="two_tone", specular_strength=0.08), seed=4)
key = np.array([0.4, 0.5, 0.77])
key /= np.linalg.norm(key)
env = gen_procedural_env(
    ProceduralEnvSpec(lobes=(Lobe(tuple(key), 0.08, 200.0, (1, 1, 1)),), ambient=0.3, height=16, width=32), 0)

bundle = render_env(scene, env, res)
diffused = render_diffused(scene, env, 1.0, res)
alpha = bundle.alpha
scale = 0.5 / luminance(bundle.image.rgb[alpha > 0]).mean()
hdrio.write_png(out / "bust.png", bundle.image.rgb * scale)
hdrio.write_png(out / "bust_diffused.png", diffused.rgb * scale)

maps = compute_spec_shadow(bundle.image.rgb, diffused.rgb, alpha)
hdrio.write_png(out / "specular.png", maps.specular, srgb=False)
hdrio.write_png(out / "shadow.png", maps.shadow, srgb=False)
fg = alpha > 0
print(f"subject pixels {fg.sum()}, specular-side {np.sum(maps.specular > 0)}, shadow-side {np.sum(maps.shadow > 0)}")
print("pixels in both maps:", int(np.sum(np.minimum(maps.specular, maps.shadow) > 0)))
err = np.abs(reconstruct_diffuse(bundle.image.rgb, maps) - luminance(diffused.rgb))[fg]
print(f"rebuilt diffuse luminance, max error {err.max():.2e}")

# Shadows from a hard light are crisp and dark; soft light gives faint, wide ones.
mask = project_shadow_mask(scene, sample_silhouette("leaves", 3), key, res)
for g in (0.2, 0.5, 0.9):
    shadowed = apply_external_shadow(bundle, scene, env, mask, g)
    hdrio.write_png(out / f"leaves_g{g}.png", shadowed.rgb * scale)
    darkening = 1 - luminance(shadowed.rgb)[fg].mean() / luminance(bundle.image.rgb)[fg].mean()
    print(f"G = {g}: mean darkening {darkening:.1%}")
print(f"environment Gini {gini(env):.3f}; images in {out}/")
