"""Command-line entry point.

Commands: split, train, infer, fid, mos, export-study, serve-study. Each
command prints one machine-readable JSON record on stdout at the end and
exits 0 on success; failures print a structured error record to stderr and
exit nonzero. CLI overrides beat config-file values, which beat defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as config_mod
from . import datasets, imaging, metrics, models, study, trainer
from .errors import SemisrError

# Default held-out count mirrors the 238-image test protocol; used by `split`
# only when the pool is big enough and --test is not given.
AUTO_TEST_COUNT = 238


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _fail(code: str, message: str) -> int:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return 1


def cmd_split(args) -> int:
    pool, _ = datasets._list_pool(Path(args.hr))
    if args.test is not None:
        n_test = args.test
    else:
        n_test = AUTO_TEST_COUNT if len(pool) - args.paired >= AUTO_TEST_COUNT else 0
    manifest = datasets.build_split(
        args.hr, n_paired=args.paired, n_unpaired=args.unpaired,
        n_test=n_test, seed=args.seed, scale=args.scale,
    )
    out = Path(args.out)
    datasets.save_manifest(manifest, out)
    print(f"{'subset':<10} {'count':>6}")
    for name, count in manifest.counts.items():
        print(f"{name:<10} {count:>6}")
    _emit({"command": "split", "manifest": str(out), "seed": args.seed, **manifest.counts})
    return 0


def cmd_train(args) -> int:
    run = config_mod.load_run_config(args.config, overrides=args.set or [])
    if args.out:
        run.out_dir = args.out
    if run.manifest is None:
        return _fail("config", "data.manifest is required for train")
    if run.out_dir is None:
        return _fail("config", "data.out_dir (or --out) is required for train")
    manifest = datasets.load_manifest(run.manifest)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.echo_config(run, out / "config_echo.yaml")
    last = {}
    state = trainer.fit(run.train, manifest, out_dir=out, resume=args.resume, log_hook=last.update)
    _emit(
        {
            "command": "train",
            "out_dir": str(out),
            "batches": state.batch_idx,
            "stage": state.stage,
            "final_losses": {k: v for k, v in last.items() if k not in ("step", "stage")},
            "checkpoint": str(out / "ckpt_last.pt"),
        }
    )
    return 0


def cmd_infer(args) -> int:
    data = models.load_checkpoint(args.ckpt)
    gen = models.Generator(models.GeneratorConfig(**data["configs"]["generator"]))
    gen.load_state_dict(data["gen_state"])
    lr = imaging.load_image(args.input)
    sr = trainer.infer(gen, lr, tile=args.tile, tile_overlap=args.tile_overlap)
    imaging.save_image(sr, args.output)
    _emit(
        {
            "command": "infer",
            "input": args.input,
            "output": args.output,
            "input_size": [lr.height, lr.width],
            "output_size": [sr.height, sr.width],
        }
    )
    return 0


def cmd_fid(args) -> int:
    value = metrics.fid(args.real, args.fake, network=args.backbone, n_max=args.n_max)
    print(f"FID: {value:.4f}")
    _emit({"command": "fid", "real": args.real, "fake": args.fake, "backbone": args.backbone, "fid": value})
    return 0


def cmd_mos(args) -> int:
    records = metrics.load_ratings(args.ratings)
    name_of = {}
    if args.key:
        name_of = json.loads(Path(args.key).read_text())
    if args.method:
        table = [metrics.mos(records, args.method)]
    else:
        table = metrics.mos_table(records)  # per-method is the default view
    print(f"{'method':<24} {'mos':>7} {'std':>7} {'n':>5}")
    for row in table:
        label = name_of.get(row.method_id, row.method_id)
        print(f"{label:<24} {row.mean:>7.3f} {row.stddev:>7.3f} {row.count:>5}")
    _emit(
        {
            "command": "mos",
            "ratings": args.ratings,
            "methods": [
                {
                    "method_id": r.method_id,
                    "method": name_of.get(r.method_id, r.method_id),
                    "mos": round(r.mean, 3),
                    "stddev": round(r.stddev, 3),
                    "count": r.count,
                }
                for r in table
            ],
        }
    )
    return 0


def _parse_method(spec: str) -> tuple[str, str]:
    if "=" not in spec:
        raise SemisrError(f"method spec {spec!r} must look like name=path")
    name, path = spec.split("=", 1)
    return name, path


def cmd_export_study(args) -> int:
    methods = [_parse_method(m) for m in args.method]
    manifest = datasets.load_manifest(args.manifest)
    bundle = study.export_study(
        methods, manifest, args.out, n_images=args.images, hr_size=args.hr_size, seed=args.seed
    )
    _emit(
        {
            "command": "export-study",
            "out_dir": str(bundle.root),
            "n_images": len(bundle.images),
            "n_items": len(bundle.items),
            "methods": [name for name, _ in methods],
        }
    )
    return 0


def cmd_serve_study(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.study, args.ratings, session_seed=args.session_seed, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semisr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("split", help="build a paired/unpaired/test split manifest")
    sp.add_argument("--hr", required=True, help="dataset root containing hr/ (and optional lr/)")
    sp.add_argument("--paired", type=int, required=True)
    sp.add_argument("--unpaired", type=int, default=None, help="default: all remaining images")
    sp.add_argument("--test", type=int, default=None, help=f"default: {AUTO_TEST_COUNT} when the pool allows, else 0")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_split)

    tp = sub.add_parser("train", help="run the two-stage training loop")
    tp.add_argument("--config", required=True)
    tp.add_argument("--resume", default=None, help="checkpoint to resume from")
    tp.add_argument("--out", default=None, help="output directory (overrides data.out_dir)")
    tp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")
    tp.set_defaults(func=cmd_train)

    ip = sub.add_parser("infer", help="super-resolve one image with a checkpoint")
    ip.add_argument("--ckpt", required=True)
    ip.add_argument("--in", dest="input", required=True)
    ip.add_argument("--out", dest="output", required=True)
    ip.add_argument("--tile", type=int, default=0, help="LR tile size; 0 = no tiling")
    ip.add_argument("--tile-overlap", type=int, default=4)
    ip.set_defaults(func=cmd_infer)

    fp = sub.add_parser("fid", help="FID between two image directories")
    fp.add_argument("--real", required=True)
    fp.add_argument("--fake", required=True)
    fp.add_argument("--backbone", default="tiny", choices=["tiny", "inception-v3"])
    fp.add_argument("--n-max", type=int, default=None)
    fp.set_defaults(func=cmd_fid)

    mp = sub.add_parser("mos", help="aggregate mean opinion scores from a ratings log")
    mp.add_argument("--ratings", required=True)
    mp.add_argument("--by-method", action="store_true",
                    help="group scores per method (the default view)")
    mp.add_argument("--method", default=None, help="report a single method id only")
    mp.add_argument("--key", default=None, help="method-key file to de-blind method names")
    mp.set_defaults(func=cmd_mos)

    ep = sub.add_parser("export-study", help="render a blinded rating-study bundle")
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--method", action="append", required=True, metavar="NAME=SOURCE",
                    help="checkpoint (.pt) or directory of rendered outputs; repeatable")
    ep.add_argument("--images", type=int, default=10)
    ep.add_argument("--hr-size", type=int, default=256)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_export_study)

    vp = sub.add_parser("serve-study", help="serve the rating backend (and UI, if built)")
    vp.add_argument("--study", required=True)
    vp.add_argument("--ratings", required=True)
    vp.add_argument("--session-seed", type=int, default=0)
    vp.add_argument("--ui", default=None, help="static UI bundle directory")
    vp.add_argument("--host", default="127.0.0.1")
    vp.add_argument("--port", type=int, default=8000)
    vp.set_defaults(func=cmd_serve_study)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SemisrError as exc:
        return _fail(type(exc).__name__, str(exc))
    except FileNotFoundError as exc:
        return _fail("FileNotFound", str(exc))
    except (OSError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
