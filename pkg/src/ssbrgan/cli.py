"""Command-line entry point.

Every command accepts ``--config FILE`` (``key = value`` lines whose keys are
the command's long option names) and ``--seed``; explicit flags override the
file.  Artifacts and a ``<command>.config.txt`` snapshot of the resolved
settings go to ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import gradcheck, metrics, pairing, phantom
from .ssbr import SsbrConfig, load_ssbr, prepare_volume, score_slices, score_volume, train_ssbr
from .translate import TranslatorConfig, load_translator, train_translation, translate_volume
from .volume import (
    RoiBounds,
    Volume,
    export_pgm,
    load_volume,
    normalize_intensity,
    resize_slice,
    save_volume,
    select_abdominal_roi,
)

log = logging.getLogger("ssbrgan")

COMMANDS = ("gen-phantoms", "train-ssbr", "score", "pair", "train-translate", "translate",
            "evaluate", "gradcheck")


def _size(text: str) -> tuple[int, int]:
    parts = [int(p) for p in str(text).replace("x", ",").split(",")]
    return (parts[0], parts[0]) if len(parts) == 1 else (parts[0], parts[1])


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _paths(values) -> list[str]:
    if isinstance(values, str):
        return [v for v in values.replace(",", " ").split() if v]
    return list(values or [])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with defaults for this command")
    common.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="ssbrgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-phantoms", parents=[common], help="write phantom volume pairs")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--n-slices", type=int, default=100)
    p.add_argument("--n-slices-b", type=int, default=None)
    p.add_argument("--size", type=_size, default=(64, 64))
    p.add_argument("--warp", type=float, default=0.0, help="slice-density warp of volume A")
    p.add_argument("--warp-b", type=float, default=None, help="warp of volume B (default: same as A)")
    p.add_argument("--random-warp", type=float, default=0.0,
                   help="if > 0, draw per-pair warps uniformly in [-x, x] and slice counts in [0.8N, 1.2N]")
    p.add_argument("--contrast-delta", type=float, default=160.0)

    p = sub.add_parser("train-ssbr", parents=[common], help="train the slice score regressor")
    p.add_argument("volumes", nargs="*", help="AVOL1 volumes from both domains")
    p.add_argument("--data", default=None, help="directory whose *.avol files are added to the volumes")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--input-size", type=_size, default=(64, 64))
    p.add_argument("--alpha", type=float, default=5e-3, help="order loss weight")
    p.add_argument("--beta", type=float, default=1.0, help="anatomy loss weight")
    p.add_argument("--gamma", type=float, default=10.0, help="norm loss weight")
    p.add_argument("--batch-volumes", type=int, default=4)
    p.add_argument("--slices-per-volume", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--augment-shift", type=int, default=4)
    p.add_argument("--renormalize-bm", type=_bool, default=False)

    p = sub.add_parser("score", parents=[common], help="score the ROI slices of a volume")
    p.add_argument("volume")
    p.add_argument("--model", required=True)

    p = sub.add_parser("pair", parents=[common], help="show anatomically paired slices")
    p.add_argument("volume_a")
    p.add_argument("volume_b")
    p.add_argument("--strategy", choices=("ssbr", "pbs"), default="ssbr")
    p.add_argument("--model", default=None, help="SSBR checkpoint (needed for --strategy ssbr)")
    p.add_argument("--pairs", type=int, default=8, help="number of pairs J")
    p.add_argument("--manifest", default=None, help="phantom manifest; adds an anatomical offset column")

    p = sub.add_parser("train-translate", parents=[common], help="train the translator")
    p.add_argument("--a", nargs="+", required=True, help="domain A (contrast) volumes")
    p.add_argument("--b", nargs="+", required=True, help="domain B (non-contrast) volumes")
    p.add_argument("--ssbr", default=None, help="SSBR checkpoint")
    p.add_argument("--strategy", choices=("ssbr", "pbs"), default="ssbr")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--image-size", type=_size, default=(32, 32))
    p.add_argument("--w-adv", type=float, default=1.0)
    p.add_argument("--w-cyc", type=float, default=10.0)
    p.add_argument("--w-id", type=float, default=0.5)
    p.add_argument("--w-acl", type=float, default=1.0)
    p.add_argument("--template", type=_bool, default=True)
    p.add_argument("--mask", type=_bool, default=True)
    p.add_argument("--gen-blocks", type=int, default=4)
    p.add_argument("--gen-channels", type=int, default=16)
    p.add_argument("--disc-layers", type=int, default=3)
    p.add_argument("--learning-rate", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--pool-size", type=int, default=50)
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("translate", parents=[common], help="translate a volume slice by slice")
    p.add_argument("volume")
    p.add_argument("--model", required=True, help="translator checkpoint")
    p.add_argument("--direction", choices=("AB", "BA"), default="AB")
    p.add_argument("--mask", type=_bool, default=None)
    p.add_argument("--output", default=None, help="output AVOL1 path (default OUT/translated.avol)")
    p.add_argument("--pgm-slice", type=int, default=None, help="also export this slice as PGM")

    p = sub.add_parser("evaluate", parents=[common], help="MSE/SSIM/PSNR between real and fake volumes")
    p.add_argument("real")
    p.add_argument("fake")
    p.add_argument("--roi", default=None, help="top,bottom slice indices (default: detect on the real volume)")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of the loss gradients")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions} - {"help", "config"}
    values = cfgmod.read_config(args.config)
    unknown = sorted(set(values) - known)
    if unknown:
        parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    converted = {}
    for action in sub._actions:
        if action.dest in values:
            raw = values[action.dest]
            if action.nargs in ("+", "*"):
                converted[action.dest] = _paths(raw)
            elif action.type is not None:
                converted[action.dest] = action.type(raw)
            else:
                converted[action.dest] = raw
    sub.set_defaults(**converted)
    # positional arguments may now come from the file
    for action in sub._actions:
        if not action.option_strings and action.dest in converted:
            action.nargs = "?" if action.nargs is None else "*"
    return parser.parse_args(argv)


def _snapshot(args, out: Path) -> None:
    # the output location does not affect results, so reruns elsewhere stay byte-identical
    values = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "out")}
    (out / f"{args.command}.config.txt").write_text(cfgmod.format_config(values))


def cmd_gen_phantoms(args, out: Path) -> None:
    rng = cfgmod.substream(args.seed, "phantom")
    for i in range(args.count):
        seed = int(rng.integers(0, 2**63 - 1))
        n_a, n_b, w_a, w_b = args.n_slices, args.n_slices_b, args.warp, args.warp_b
        if args.random_warp > 0:
            lo, hi = int(0.8 * args.n_slices), int(1.2 * args.n_slices) + 1
            n_a, n_b = int(rng.integers(lo, hi)), int(rng.integers(lo, hi))
            w_a, w_b = (float(w) for w in rng.uniform(-args.random_warp, args.random_warp, 2))
        spec = phantom.PhantomSpec(seed=seed, n_slices=n_a, n_slices_b=n_b, slice_size=args.size,
                                   warp=w_a, warp_b=w_b, contrast_delta_HU=args.contrast_delta)
        pair = phantom.generate_phantom_pair(spec)
        paths = phantom.save_pair(pair, spec, out, f"pair_{i:03d}")
        print(f"{paths['A'].name} {paths['B'].name} {paths['manifest'].name}")


def _collect(paths, data_dir) -> list[str]:
    out = list(paths or [])
    if data_dir:
        out += sorted(str(p) for p in Path(data_dir).glob("*.avol"))
    return out


def cmd_train_ssbr(args, out: Path) -> None:
    vols = _collect(args.volumes, args.data)
    config = SsbrConfig(
        backbone_depth=args.depth, base_channels=args.base_channels, input_size=args.input_size,
        loss_weights=(args.alpha, args.beta, args.gamma), batch_volumes=args.batch_volumes,
        slices_per_volume=args.slices_per_volume, learning_rate=args.learning_rate,
        steps=args.steps, seed=cfgmod.substream_seed(args.seed, "ssbr"),
        renormalize_bm=args.renormalize_bm, augment_shift=args.augment_shift)
    model = train_ssbr(config, vols, log_path=out / "ssbr_log.txt")
    model.save(out / "ssbr.ackpt")
    final = model.history[-1][1] if model.history else float("nan")
    print(f"trained {config.steps} steps on {len(vols)} volumes, final loss {final:.6g}")


def cmd_score(args, out: Path) -> None:
    trained = load_ssbr(args.model)
    v = load_volume(args.volume)
    roi = select_abdominal_roi(v)
    norm = v if v.normalized else normalize_intensity(v)
    series = score_volume(trained.model, norm, roi, trained.config.input_size, args.volume)
    lines = ["slice score"] + [f"{i} {s:.6f}" for i, s in zip(roi.indices, series.scores)]
    text = "\n".join(lines) + "\n"
    (out / "scores.txt").write_text(text)
    sys.stdout.write(text)


def cmd_pair(args, out: Path) -> None:
    rng = cfgmod.substream(args.seed, "pairing")
    model = load_ssbr(args.model) if args.model else None
    if args.strategy == "ssbr" and model is None:
        raise ValueError("--strategy ssbr needs --model")
    size = model.config.input_size if model else (64, 64)
    va = prepare_volume(load_volume(args.volume_a), size)
    vb = prepare_volume(load_volume(args.volume_b), size)
    if args.strategy == "ssbr":
        batch = pairing.make_paired_batch(va, vb, model.model, args.pairs, rng)
    else:
        if model is not None:
            va.scores = score_slices(model.model, va.slices)
            vb.scores = score_slices(model.model, vb.slices)
        batch = pairing.make_pbs_batch(va, vb, args.pairs, rng)
    offsets = None
    if args.manifest:
        cmap = phantom.read_manifest(args.manifest)["m_star"]
        offsets = [phantom.anatomical_offset(p, cmap) for p in batch.indices]
    text = pairing.format_pair_table(batch, offsets)
    if offsets is not None:
        text += f"# mean_offset = {np.mean(offsets):.6f}\n"
    (out / f"pairs_{args.strategy}.txt").write_text(text)
    sys.stdout.write(text)


def cmd_train_translate(args, out: Path) -> None:
    config = TranslatorConfig(
        gen_blocks=args.gen_blocks, gen_channels=args.gen_channels, disc_layers=args.disc_layers,
        loss_weights=(args.w_adv, args.w_cyc, args.w_id, args.w_acl),
        template_mode=args.template, mask_postprocess=args.mask, image_size=args.image_size,
        learning_rate=args.learning_rate, steps=args.steps, batch_size=args.batch_size,
        fake_pool_size=args.pool_size, strategy=args.strategy,
        checkpoint_every=args.checkpoint_every, seed=cfgmod.substream_seed(args.seed, "translate"))
    if config.needs_ssbr and not args.ssbr:
        raise ValueError(f"strategy {config.strategy!r} with w_acl={args.w_acl} needs --ssbr")
    run = train_translation(config, args.a, args.b, args.ssbr, out_dir=out)
    run.state.save(out / "translator.ackpt")
    print(f"trained {config.steps} steps; checkpoint {out / 'translator.ackpt'}")


def cmd_translate(args, out: Path) -> None:
    state = load_translator(args.model)
    v = load_volume(args.volume)
    fake = translate_volume(state, v, args.direction, args.mask)
    dest = Path(args.output) if args.output else out / "translated.avol"
    save_volume(fake, dest)
    if args.pgm_slice is not None:
        export_pgm(fake.intensities[args.pgm_slice], out / f"slice_{args.pgm_slice:04d}.pgm")
    print(f"wrote {dest}")


def _on_grid(real: Volume, shape) -> Volume:
    norm = real if real.normalized else normalize_intensity(real)
    if norm.shape[1:] == tuple(shape):
        return norm
    data = np.stack([resize_slice(s, shape) for s in norm.intensities]).astype(np.float32)
    return Volume(data, norm.spacing_mm, norm.modality, normalized=True)


def cmd_evaluate(args, out: Path) -> None:
    real = load_volume(args.real)
    fake = load_volume(args.fake)
    if args.roi:
        top, bottom = (int(v) for v in args.roi.split(","))
        roi = RoiBounds(top, bottom)
    else:
        roi = select_abdominal_roi(real)
    report = metrics.evaluate_paired(_on_grid(real, fake.shape[1:]), _on_grid(fake, fake.shape[1:]), roi)
    report.write(out / "report.txt")
    sys.stdout.write(report.to_table())


def cmd_gradcheck(args, out: Path) -> int:
    results = gradcheck.run_all(seed=args.seed)
    ok = True
    lines = []
    for name, err in results.items():
        passed = err <= gradcheck.TOLERANCE
        ok &= passed
        lines.append(f"{name} max_rel_err = {err:.3e} {'ok' if passed else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    (out / "gradcheck.txt").write_text(text)
    sys.stdout.write(text)
    return 0 if ok else 1


HANDLERS = {
    "gen-phantoms": cmd_gen_phantoms,
    "train-ssbr": cmd_train_ssbr,
    "score": cmd_score,
    "pair": cmd_pair,
    "train-translate": cmd_train_translate,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, cfgmod.ConfigError) as exc:
        print(f"ssbrgan: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _snapshot(args, out)
        code = HANDLERS[args.command](args, out)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("command failed", exc_info=True)
        print(f"ssbrgan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(code or 0)


def main() -> None:
    sys.exit(run())
