"""Command line entry point: ``tiergan <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .config import MOCK_OVERRIDES, dump_config, load_config

log = logging.getLogger("tiergan")


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 256x256, got {text!r}")
    return h, w


def _git_rev():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_manifest(directory, command, cfg, args, started, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "git": _git_rev(),
        "seed": cfg["train.seed"],
        "config": {k: cfg[k] for k in sorted(cfg)},
        "args": {k: str(v) for k, v in sorted(vars(args).items()) if k not in ("func",)},
        "timing": {"started": started, "seconds": round(time.time() - started, 3)},
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config(args):
    overrides = dict(MOCK_OVERRIDES) if getattr(args, "mock", False) else {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return load_config(args.config, overrides)


# --- commands ---------------------------------------------------------------

def cmd_schedule(args, cfg):
    from .pyramid import basic_schedule, make_schedule

    kw = dict(N=args.stages, base_short=cfg["schedule.base_short"], max_long=cfg["schedule.max_long"])
    sched = (basic_schedule(args.size, **kw) if args.geometric
             else make_schedule(args.size, k=cfg["schedule.k"], **kw))
    print(sched.table())
    if args.rows:
        print("stage,height,width")
        for row in sched.rows():
            print(",".join(map(str, row)))
    return None


def cmd_prepare_prior(args, cfg):
    from .config import make_backend, prior_config
    from .imgio import read_image
    from .pyramid import build_pyramid, make_schedule
    from .training import prepare_prior
    from .models import plan_stage_count

    image = read_image(args.image)
    sched = make_schedule(tuple(image.shape[-2:]), N=plan_stage_count(cfg["plan"]) - 1, k=cfg["schedule.k"],
                          base_short=cfg["schedule.base_short"], max_long=cfg["schedule.max_long"])
    dataset = prepare_prior(build_pyramid(image, sched), make_backend(cfg), prior_config(cfg))
    dataset.save(args.out)
    return args.out


def cmd_train(args, cfg):
    from .config import loss_weights, make_backend, make_extractor, model_kwargs, prior_config, train_config
    from .imgio import read_image
    from .models import SEMANTIC, parse_preset
    from .priors import StructuralDataset
    from .training import fixed_math, train_pipeline

    plan = args.plan or cfg["plan"]
    kinds = {kind for kind, _ in parse_preset(plan)}
    dataset = StructuralDataset.load(args.dataset) if args.dataset else None
    backend = make_backend(cfg) if "structural" in kinds and dataset is None else None
    extractor = make_extractor(cfg) if SEMANTIC in kinds and cfg["loss.lambda_p"] else None
    kw = dict(image=read_image(args.image), plan=plan, cfg=train_config(cfg), backend=backend,
              extractor=extractor, weights=loss_weights(cfg), prior=prior_config(cfg),
              checkpoint_dir=args.checkpoint, dataset=dataset, k=cfg["schedule.k"],
              base_short=cfg["schedule.base_short"], max_long=cfg["schedule.max_long"],
              model_kwargs=model_kwargs(cfg))
    if cfg["train.fixed_math"]:
        with fixed_math():
            train_pipeline(**kw)
    else:
        train_pipeline(**kw)
    return args.checkpoint


def _load_model(args):
    from .training import TrainedModel

    return TrainedModel.load(args.checkpoint)


def cmd_sample(args, cfg):
    from .imgio import write_image
    from .tasks import sample

    model = _load_model(args)
    for i, img in enumerate(sample(model, args.n, seed=cfg["train.seed"] if args.seed is None else args.seed)):
        write_image(Path(args.out) / f"sample_{i:04d}.png", img)
    return args.out


def _composite(args, cfg, fn):
    from .imgio import read_image, read_mask, write_image

    model = _load_model(args)
    edited = read_image(args.image)
    original = read_image(args.original) if args.original else edited
    out = fn(model, edited, original, read_mask(args.mask), args.entry_stage, cfg["tasks.radius"] or None)
    write_image(Path(args.out) / "result.png", out)
    return args.out


def cmd_edit(args, cfg):
    from .tasks import edit_composite
    return _composite(args, cfg, edit_composite)


def cmd_harmonize(args, cfg):
    from .tasks import harmonize
    return _composite(args, cfg, harmonize)


def cmd_paint(args, cfg):
    from .imgio import read_image, write_image
    from .tasks import paint_to_image

    model = _load_model(args)
    write_image(Path(args.out) / "result.png", paint_to_image(model, read_image(args.image), args.entry_stage))
    return args.out


def cmd_evaluate(args, cfg):
    from .config import make_extractor
    from .imgio import read_image
    from .metrics import evaluate

    paths = sorted(p for p in Path(args.dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    report = evaluate(read_image(args.original), [read_image(p) for p in paths], make_extractor(cfg, "metrics.extractor"),
                      names=[p.name for p in paths], layer=cfg["metrics.layer"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())
    print(report.to_csv(), end="")
    return out.parent


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--mock", action="store_true",
                        help="use the mock prior backend and feature extractors (no pretrained weights)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tiergan", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", parents=[common], help="print the stage size table")
    p.add_argument("--size", type=_parse_size, required=True)
    p.add_argument("--stages", type=int, default=6, help="N, the index of the top stage")
    p.add_argument("--geometric", action="store_true", help="geometric schedule instead of cubic")
    p.add_argument("--rows", action="store_true", help="also print stage,height,width rows")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("prepare-prior", parents=[common], help="invert the image and render the jitter dataset")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare_prior)

    p = sub.add_parser("train", parents=[common], help="train all stages of a plan")
    p.add_argument("--image", required=True)
    p.add_argument("--plan", help="plan preset, e.g. St1Se3Te3")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="directory written by prepare-prior")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="draw random samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    for name, func, help_ in (("edit", cmd_edit, "re-synthesize an edited region"),
                              ("harmonize", cmd_harmonize, "blend a pasted object")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--image", required=True, help="naive edited / composited image")
        p.add_argument("--mask", required=True, help="binary mask of the edited region")
        p.add_argument("--original", help="image to paste into (defaults to --image)")
        p.add_argument("--entry-stage", type=int, default=1)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("paint", parents=[common], help="paint-to-image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--entry-stage", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser("evaluate", parents=[common], help="SIFID / SSIM report for a directory of samples")
    p.add_argument("--original", required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_evaluate)
    return parser


def run(argv=None) -> int:
    from .errors import CapabilityError, TierGANError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    started = time.time()
    try:
        cfg = _config(args)
        out_dir = args.func(args, cfg)
    except CapabilityError as exc:
        print(f"error: {exc}\nhint: rerun with --mock to use the mock backends", file=sys.stderr)
        return 3
    except TierGANError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if out_dir is not None:
        write_manifest(out_dir, args.command, cfg, args, started)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
