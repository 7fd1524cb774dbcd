"""Command-line entry point (``lightdiffusion <subcommand>``).

Exit status is 0 on success, 2 for invalid input and 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import hdrio
from .envmap import ProceduralEnvSpec, diffuse_convolve, gen_procedural_env, gini
from .errors import ValidationError

log = logging.getLogger("lightdiffusion")


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


# -- bundles -----------------------------------------------------------------


def write_bundle(out_dir, bundle, meta: dict) -> None:
    """Store a RenderBundle as PFM buffers, PNG previews and ``bundle.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hdrio.write_pfm(out / "image.pfm", bundle.image.rgb)
    hdrio.write_pfm(out / "alpha.pfm", bundle.alpha)
    hdrio.write_pfm(out / "albedo.pfm", bundle.albedo_gt.rgb)
    hdrio.write_pfm(out / "normals.pfm", bundle.normals)
    hdrio.write_png(out / "skin_mask.png", bundle.skin_mask)
    hdrio.write_png(out / "preview.png", bundle.image.rgb)
    _write_json(out / "bundle.json", meta)


def read_bundle_input(bundle_dir):
    """``(image, alpha, skin_mask)`` as float64/bool arrays from a bundle directory."""
    d = Path(bundle_dir)
    if not (d / "image.pfm").exists() or not (d / "alpha.pfm").exists():
        raise ValidationError(f"{d}: not a render bundle (image.pfm/alpha.pfm missing)")
    image = hdrio.read_pfm(d / "image.pfm").astype(np.float64)
    alpha = hdrio.read_pfm(d / "alpha.pfm").astype(np.float64)
    if image.ndim != 3 or alpha.shape != image.shape[:2]:
        raise ValidationError(f"{d}: image and alpha are not aligned")
    skin = None
    if (d / "skin_mask.png").exists():
        skin = hdrio.read_png(d / "skin_mask.png") > 127
    return image, alpha, skin


def _to_nchw(image, alpha):
    import torch

    x = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1)[None]
    a = torch.from_numpy(alpha.astype(np.float32))[None, None]
    return x, a


def _from_nchw(t):
    return t[0].permute(1, 2, 0).double().numpy()


def _save_image(out, rgb):
    out = Path(out)
    if out.suffix.lower() == ".png":
        hdrio.write_png(out, rgb)
    else:
        hdrio.write_pfm(out, rgb)
        hdrio.write_png(out.with_suffix(".png"), rgb)


# -- subcommands ---------------------------------------------------------------


def cmd_gen_env(args):
    spec = ProceduralEnvSpec.from_dict(_read_json(args.spec))
    env = gen_procedural_env(spec, args.seed)
    hdrio.save_env(args.out, env)


def cmd_gini(args):
    print(repr(gini(hdrio.load_env(args.env))))


def cmd_convolve(args):
    env = hdrio.load_env(args.env)
    out = diffuse_convolve(env, args.n, out_height=args.out_height)
    hdrio.save_env(args.out, out)


def cmd_render(args):
    from .renderer import SceneSpec, build_scene, render_env

    spec = SceneSpec.from_dict(_read_json(args.scene_spec))
    scene = build_scene(spec, args.seed)
    env = hdrio.load_env(args.env)
    bundle = render_env(scene, env, (args.resolution, args.resolution), args.integration_height)
    write_bundle(args.out_dir, bundle, {
        "scene_spec": spec.to_dict(),
        "seed": args.seed,
        "env": str(args.env),
        "resolution": args.resolution,
        "integration_height": args.integration_height,
    })


def cmd_dataset(args):
    from .dataset import DatasetConfig, generate_dataset

    config = DatasetConfig.load(args.config) if args.config else DatasetConfig()
    manifest = generate_dataset(config, args.seed, args.out_dir)
    print(f"wrote {len(manifest['records'])} examples to {args.out_dir}")


def cmd_train(args):
    from .dataset import load_manifest, load_split
    from .model.params import save_params
    from .model.training import TrainConfig, train, write_history

    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    _, examples = load_split(load_manifest(args.manifest), "train")
    params, history = train(examples, config)
    save_params(args.out_params, params)
    history_path = args.history or str(Path(args.out_params).with_suffix(".loss.csv"))
    write_history(history_path, history)
    print(f"final loss {history[-1][2]:.6f}" if history else "no training steps")


def _eval_level(text):
    if text == "sampled":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number or 'sampled'") from None


def cmd_eval(args):
    from .dataset import evaluate, load_manifest
    from .metrics import format_table
    from .model.params import load_params

    manifest = load_manifest(args.manifest)
    params = load_params(args.params)
    kw = dict(split=args.split, t=args.t, only_augmented=args.only_augmented)
    report = evaluate(params, manifest, **kw)
    baseline = evaluate(None, manifest, **kw)
    csv_text = report.to_csv()
    if args.out:
        with open(args.out, "w") as f:
            f.write(csv_text)
    else:
        sys.stdout.write(csv_text + "\n")
    print(format_table({"identity (input)": baseline.mean(), "light diffusion": report.mean()}))


def cmd_diffuse(args):
    import torch

    from .maps import composite
    from .model.params import load_params
    from .model.training import predict_diffused

    params = load_params(args.params)
    image, alpha, _ = read_bundle_input(args.input_bundle)
    x, a = _to_nchw(image, alpha)
    with torch.no_grad():
        pred = _from_nchw(predict_diffused(params, x, a, args.t))
    _save_image(args.out, composite(pred, alpha, image))


def cmd_albedo(args):
    import torch

    from .model.params import load_params
    from .model.training import estimate_tint, face_crop, iterated_albedo, untint

    params = load_params(args.params)
    image, alpha, skin = read_bundle_input(args.input_bundle)
    x, a = _to_nchw(image, alpha)
    with torch.no_grad():
        tinted = iterated_albedo(params, x, a, args.iters)
    _save_image(args.out, _from_nchw(tinted))
    if args.untinted_out:
        if skin is None or not skin.any():
            raise ValidationError("bundle has no skin mask; cannot estimate the tint")
        s = torch.from_numpy(skin.astype(np.float32))[None]
        with torch.no_grad():
            tint = estimate_tint(params, face_crop(tinted[0], s))[0].double().numpy()
        _save_image(args.untinted_out, untint(_from_nchw(tinted), tint))
        print("tint", " ".join(f"{v:.6f}" for v in tint))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lightdiffusion", description="Light diffusion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-env", help="procedural environment map from a JSON spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help=".pfm or .hdr")
    s.set_defaults(func=cmd_gen_env)

    s = sub.add_parser("gini", help="print the lighting Gini coefficient of a map")
    s.add_argument("env")
    s.set_defaults(func=cmd_gini)

    s = sub.add_parser("convolve", help="cosine-power prefilter of a map")
    s.add_argument("env")
    s.add_argument("--n", type=float, required=True)
    s.add_argument("--out-height", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_convolve)

    s = sub.add_parser("render", help="render a scene under a map into a bundle directory")
    s.add_argument("--scene-spec", required=True)
    s.add_argument("--env", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=int, default=128)
    s.add_argument("--integration-height", type=int, default=16)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("dataset", help="generate a training/eval dataset")
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_dataset)

    s = sub.add_parser("train", help="train the networks on a dataset manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.add_argument("--out-params", required=True)
    s.add_argument("--history", default=None, help="loss CSV (default: <params>.loss.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score trained networks on a manifest split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--split", default="eval", choices=("train", "eval"))
    s.add_argument("--t", type=_eval_level, default=0.0,
                   help="0 (compare with the fully diffuse render) or 'sampled' "
                        "(each example at its own level, against its stored target)")
    s.add_argument("--only-augmented", action="store_true",
                   help="score only examples that carry a synthetic shadow")
    s.add_argument("--out", default=None, help="CSV path (default: standard output)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("diffuse", help="light-diffuse a rendered bundle")
    s.add_argument("--params", required=True)
    s.add_argument("--input-bundle", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--out", required=True, help=".pfm (plus .png preview) or .png")
    s.set_defaults(func=cmd_diffuse)

    s = sub.add_parser("albedo", help="tinted (and optionally untinted) albedo of a bundle")
    s.add_argument("--params", required=True)
    s.add_argument("--input-bundle", required=True)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--out", required=True)
    s.add_argument("--untinted-out", default=None)
    s.set_defaults(func=cmd_albedo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
