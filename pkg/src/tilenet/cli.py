"""Command-line entry point: ``tilenet <subcommand> [flags]``.

Settings resolve as built-in defaults, then ``--config`` file (``key=value``
lines, ``#`` comments), then explicit flags. Every run echoes the resolved
settings to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import baseline, texio, trainer
from .modelio import ModelFileError, load_model, save_model
from .mrnet import StageConfig, as_mrnet, init_mrnet, table1_configs
from .pinr import ConfigError, init_siren, param_count
from .torusmap import Camera, SceneError, TorusGeom, rasterize_torus

log = logging.getLogger("tilenet")


class UsageError(Exception):
    pass


# -- argument types -------------------------------------------------------------


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def band_list(text: str) -> list[tuple[int, int]]:
    """``4,16`` or ``4:4,16:16``; a single number means a square band."""
    out = []
    try:
        for item in text.split(","):
            parts = [int(v) for v in item.split(":")]
            if len(parts) == 1:
                parts *= 2
            if len(parts) != 2:
                raise ValueError
            out.append((parts[0], parts[1]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad band list {text!r}") from None
    return out


def hidden_list(text: str) -> list[tuple[int, ...]]:
    """Per-stage hidden widths: ``32,64`` (one layer each) or ``256/256/256`` for depth."""
    try:
        return [tuple(int(w) for w in item.split("/") if w) for item in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hidden-layer list {text!r}") from None


def float_pair(values) -> tuple[float, float]:
    return (values[0], values[0]) if len(values) == 1 else (values[0], values[1])


# -- parser ---------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file (default: none)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")


def _arch(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("architecture")
    g.add_argument("--preset", choices=["table1"], default=None, help="six-stage reference layout (default: none)")
    g.add_argument("--stages", type=int, default=3, help="number of stages (default: %(default)s)")
    g.add_argument("--bands", type=band_list, default=band_list("4,16,32"),
                   help="band limit per stage, b or b1:b2 (default: 4,16,32)")
    g.add_argument("--widths", type=int_list, default=[40, 160, 256],
                   help="first-layer frequencies per stage (default: 40,160,256)")
    g.add_argument("--hidden", type=hidden_list, default=hidden_list("32,64,128"),
                   help="hidden widths per stage, '/' separates layers (default: 32,64,128)")
    g.add_argument("--period", type=float, nargs="+", default=[2.0], metavar="P",
                   help="period along x [and y] (default: 2)")
    g.add_argument("--init", choices=["periodic", "siren"], default="periodic",
                   help="first-layer initialization (default: %(default)s)")
    g.add_argument("--omega0", type=float, default=30.0, help="SIREN frequency scale (default: %(default)s)")


def _train(p: argparse.ArgumentParser, mode: str) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--image", required=True, help="training PNG")
    g.add_argument("--out", required=True, help="output model file")
    g.add_argument("--report", default=None, help="loss curve CSV (default: <out>.csv)")
    g.add_argument("--epochs", type=int, default=100, help="epochs per stage (default: %(default)s)")
    g.add_argument("--stage-epochs", type=int_list, default=None, help="per-stage epoch schedule (default: none)")
    g.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate (default: %(default)s)")
    g.add_argument("--batch", type=int, default=65536, help="pixels per batch (default: %(default)s)")
    g.add_argument("--color", choices=["ycbcr", "rgb"], default="ycbcr", help="training color space (default: %(default)s)")
    g.add_argument("--mask", choices=["none", "binary", "soft", "periodic"],
                   default="none" if mode == "fit" else "soft", help="mask kind (default: %(default)s)")
    g.add_argument("--mask-margin", type=int, default=8, help="binary mask border in pixels (default: %(default)s)")
    g.add_argument("--gamma", type=float, default=2.0, help="soft mask exponent (default: %(default)s)")
    g.add_argument("--lp", type=float, default=2.0, help="soft mask norm order (default: %(default)s)")
    g.add_argument("--repeats", type=int, nargs=2, default=[2, 2], help="pattern repeats for the periodic mask (default: 2 2)")
    g.add_argument("--domain", type=float, nargs=4, default=[-1.0, -1.0, 1.0, 1.0], metavar=("X0", "Y0", "X1", "Y1"),
                   help="training domain (default: -1 -1 1 1)")
    if mode == "seamless":
        g.add_argument("--model", default=None, help="start from this model instead of a fresh one (default: none)")
        g.add_argument("--grad-weight", type=float, default=1.0, help="Jacobian term weight (default: %(default)s)")
        g.add_argument("--value-weight", type=float, default=1.0, help="value term weight (default: %(default)s)")
        g.add_argument("--wrap-guidance", action="store_true", help="wrap-around guidance differences (default: off)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilenet", description="Periodic sinusoidal networks for seamless textures.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit a multiresolution network to an image")
    _common(p)
    _arch(p)
    _train(p, "fit")

    p = sub.add_parser("seamless", help="train with the Poisson-regularized seamless loss")
    _common(p)
    _arch(p)
    _train(p, "seamless")

    p = sub.add_parser("init", help="write a freshly initialized model")
    _common(p)
    _arch(p)
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--channels", type=int, default=3, help="output channels (default: %(default)s)")

    p = sub.add_parser("sample", help="render a model to PNG")
    _common(p)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--domain", type=float, nargs=4, default=[-1.0, -1.0, 1.0, 1.0], metavar=("X0", "Y0", "X1", "Y1"),
                   help="sampled rectangle (default: -1 -1 1 1)")
    p.add_argument("--res", type=int, nargs="+", default=[256], help="output size, one or two values (default: 256)")
    p.add_argument("--level", type=float, default=None, help="level of detail t (default: finest)")

    p = sub.add_parser("psnr", help="PSNR between two PNGs")
    _common(p)
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("mask", help="write a training mask as PNG")
    _common(p)
    p.add_argument("--mask", choices=["binary", "soft", "periodic"], default="soft", help="mask kind (default: %(default)s)")
    p.add_argument("--res", type=int, nargs="+", default=[256], help="mask size, one or two values (default: 256)")
    p.add_argument("--mask-margin", type=int, default=8, help="binary mask border (default: %(default)s)")
    p.add_argument("--gamma", type=float, default=2.0, help="soft mask exponent (default: %(default)s)")
    p.add_argument("--lp", type=float, default=2.0, help="soft mask norm order (default: %(default)s)")
    p.add_argument("--repeats", type=int, nargs=2, default=[2, 2], help="periodic-mask repeats (default: 2 2)")
    p.add_argument("--out", required=True, help="output PNG")

    p = sub.add_parser("poisson-baseline", help="classical pixel-space seamless tile")
    _common(p)
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--mode", choices=["torus", "average-border"], default="torus", help="solver (default: %(default)s)")
    p.add_argument("--tol", type=float, default=1e-8, help="relative CG tolerance (default: %(default)s)")
    p.add_argument("--max-iter", type=int, default=20000, help="CG iteration cap (default: %(default)s)")

    p = sub.add_parser("render-torus", help="texture-map a model onto a torus")
    _common(p)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--res", type=int, nargs="+", default=[256], help="image size, one or two values (default: 256)")
    p.add_argument("--radii", type=float, nargs=2, default=[2.0, 1.0], metavar=("R", "r"), help="torus radii (default: 2 1)")
    p.add_argument("--eye", type=float, nargs=3, default=[0.0, -6.0, 4.0], help="camera position (default: 0 -6 4)")
    p.add_argument("--look-at", type=float, nargs=3, default=[0.0, 0.0, 0.0], help="camera target (default: 0 0 0)")
    p.add_argument("--fov", type=float, default=40.0, help="vertical field of view in degrees (default: %(default)s)")
    p.add_argument("--light", type=float, nargs=3, default=[0.4, -0.5, 0.75], help="light direction (default: 0.4 -0.5 0.75)")
    p.add_argument("--uv-scale", type=float, nargs=2, default=[1.0, 1.0], help="uv repeat factors (default: 1 1)")
    p.add_argument("--texture-res", type=float, default=1024.0, help="texels per period at the finest level (default: %(default)s)")

    p = sub.add_parser("info", help="architecture table and parameter counts")
    _common(p)
    p.add_argument("--model", default=None, help="model file (default: use --preset)")
    p.add_argument("--preset", choices=["table1"], default=None, help="describe a fresh preset model instead")
    return parser


# -- config files -----------------------------------------------------------------


def read_config(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(sub: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if action.nargs is None or action.nargs == 0:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
                continue
            value = action.type(raw) if action.type else raw
        else:
            value = [action.type(v) if action.type else v for v in raw.split()]
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config {key}={raw!r} not in {sorted(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)
    for a in sub._actions:
        if a.dest in defaults:
            a.required = False


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cmd = next((a for a in argv if not a.startswith("-")), None)
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        if cmd in subparsers.choices:
            try:
                _apply_config(subparsers.choices[cmd], read_config(known.config))
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
    return parser.parse_args(argv)


# -- helpers --------------------------------------------------------------------


def _res(values) -> tuple[int, int]:
    """(H, W) from ``--res N`` or ``--res W H``."""
    return (values[0], values[0]) if len(values) == 1 else (values[1], values[0])


def build_network(args, channels: int = 3):
    period = float_pair(args.period)
    if args.preset == "table1":
        net = init_mrnet(table1_configs(), period, channels, args.seed)
        net.meta["preset"] = "table1"
        return net
    if args.init == "siren":
        hidden = args.hidden[0] if args.hidden else ()
        return init_siren(args.widths[0], args.omega0, hidden, channels, args.seed, period)
    n = args.stages
    if not (len(args.bands) == len(args.widths) == n) or len(args.hidden) not in (1, n):
        raise UsageError(f"--bands, --widths and --hidden must list {n} stages")
    hidden = args.hidden if len(args.hidden) == n else args.hidden * n
    configs = [StageConfig(b, w, h) for b, w, h in zip(args.bands, args.widths, hidden)]
    return init_mrnet(configs, period, channels, args.seed)


def describe(net) -> str:
    mr = as_mrnet(net)
    lines = [f"{'stage':>5}  {'band':>12}  {'freqs':>6}  {'hidden':>16}  {'trainable':>10}  {'frozen':>7}"]
    for i, s in enumerate(mr.stages):
        if s.freq is not None and len(s.freq):
            K = s.freq.K
            band = f"[{K[:, 0].min()},{K[:, 0].max()}]x[{K[:, 1].min()},{K[:, 1].max()}]"
        else:
            band = "siren"
        pc = param_count(s)
        hidden = "/".join(str(w) for w in s.hidden_widths) or "-"
        lines.append(f"{i:>5}  {band:>12}  {s.n_freq:>6}  {hidden:>16}  {pc.trainable:>10}  {pc.frozen:>7}")
    pc = param_count(mr)
    lines.append(f"total trainable {pc.trainable}, frozen {pc.frozen}, all {pc.total}")
    lines.append(f"period {mr.period[0]:g} x {mr.period[1]:g}, channels {mr.channels}, color {mr.color_space}, "
                 f"periodic {'yes' if mr.periodic else 'no'}")
    return "\n".join(lines)


def _train_config(args, mode: str) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        epochs=args.epochs,
        batch_pixels=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        color_space=args.color,
        mode=mode,
        mask=args.mask,
        mask_margin=args.mask_margin,
        gamma=args.gamma,
        lp=args.lp,
        repeats=tuple(args.repeats),
        stage_epochs=args.stage_epochs,
        grad_weight=getattr(args, "grad_weight", 1.0),
        value_weight=getattr(args, "value_weight", 1.0),
        period_aware_guidance=getattr(args, "wrap_guidance", False),
    )


# -- commands -------------------------------------------------------------------


def cmd_train(args, mode: str) -> int:
    img = texio.load_png(args.image, tuple(args.domain))
    if mode == "seamless" and args.model:
        net = load_model(args.model)
    else:
        net = build_network(args, img.C)
    if args.color == "ycbcr" and img.C != 3:
        args.color = "rgb"
    report = trainer.train(net, img, _train_config(args, mode))
    save_model(net, args.out)
    report.save(args.report or f"{args.out}.csv")
    print(f"final PSNR {report.final_psnr:.2f} dB in {report.wall_time:.1f} s (seed {report.seed})")
    return 0


def cmd_init(args) -> int:
    save_model(build_network(args, args.channels), args.out)
    return 0


def cmd_sample(args) -> int:
    net = load_model(args.model)
    H, W = _res(args.res)
    texio.save_png(texio.sample_grid(net, tuple(args.domain), H, W, args.level), args.out)
    return 0


def cmd_psnr(args) -> int:
    value = texio.psnr(texio.load_png(args.a), texio.load_png(args.b))
    print("inf" if math.isinf(value) else f"{value:.4f}")
    return 0


def cmd_mask(args) -> int:
    H, W = _res(args.res)
    if args.mask == "soft":
        m = trainer.soft_mask(H, W, args.gamma, args.lp)
    elif args.mask == "binary":
        m = trainer.binary_border_mask(H, W, args.mask_margin)
    else:
        m = trainer.periodic_class_mask(H, W, tuple(args.repeats), args.seed)
    texio.save_png(texio.ImageGrid(m.values), args.out)
    return 0


def cmd_poisson(args) -> int:
    img = texio.load_png(args.image)
    if args.mode == "torus":
        U = baseline.forward_gradient(img, wrap=False)
        out = baseline.solve_torus(U, img.data.mean(axis=(0, 1)), args.tol, args.max_iter, domain=img.domain)
    else:
        out = baseline.solve_average_border(img, args.tol, args.max_iter)
    texio.save_png(out, args.out)
    print(f"seam score {texio.seam_score(img):.3f} -> {texio.seam_score(out):.3f}")
    return 0


def cmd_render(args) -> int:
    net = load_model(args.model)
    H, W = _res(args.res)
    geom = TorusGeom(args.radii[0], args.radii[1], tuple(args.uv_scale))
    cam = Camera(tuple(args.eye), tuple(args.look_at), math.radians(args.fov), W, H)
    texio.save_png(rasterize_torus(net, geom, cam, args.texture_res, light=tuple(args.light)), args.out)
    return 0


def cmd_info(args) -> int:
    if args.model:
        net = load_model(args.model)
    elif args.preset == "table1":
        net = init_mrnet(table1_configs(), seed=args.seed)
    else:
        raise UsageError("info needs --model or --preset")
    print(describe(net))
    return 0


COMMANDS = {
    "fit": lambda a: cmd_train(a, "fit"),
    "seamless": lambda a: cmd_train(a, "seamless"),
    "init": cmd_init,
    "sample": cmd_sample,
    "psnr": cmd_psnr,
    "mask": cmd_mask,
    "poisson-baseline": cmd_poisson,
    "render-torus": cmd_render,
    "info": cmd_info,
}


def _echo(args) -> None:
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    print("config: " + " ".join(f"{k}={v}" for k, v in items.items()), file=sys.stderr)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"tilenet: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _echo(args)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tilenet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ModelFileError, ConfigError, SceneError, RuntimeError) as exc:
        print(f"tilenet {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
