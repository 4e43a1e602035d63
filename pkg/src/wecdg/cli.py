"""Command-line entry point (``wecdg``).

Usage errors exit with status 2 (argparse). Runtime errors exit with status 1
and print one JSON object ``{"error": <type>, "message": <text>}`` on stderr.
Seeds resolve as: ``--seed`` beats ``WECDG_SEED``, which beats the config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import read_manifest, synth_dataset
from .errors import WecdgError
from .imageio import ImageBuffer, load_image, save_image
from .model import WECDG, ModelConfig, param_report
from .sdgm import BASE_LABELS, SDGMConfig
from .train import TrainConfig, evaluate, format_record, train
from .wavelet import swap_subbands, wavedec2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="overrides WECDG_SEED and the config seed")
    p.add_argument("--config", type=Path, default=None,
                   help='JSON file with optional "model", "train" and "sdgm" sections')
    p.add_argument("--precision", choices=("f32", "f64"), default=None)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise WecdgError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise WecdgError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict) or set(cfg) - {"model", "train", "sdgm"}:
        raise WecdgError('config must be an object with "model", "train" and/or "sdgm" sections')
    return cfg


def resolve_seed(cli_seed, config_seed, env=None) -> int:
    env = os.environ if env is None else env
    if cli_seed is not None:
        return int(cli_seed)
    if env.get("WECDG_SEED", "").strip():
        try:
            return int(env["WECDG_SEED"])
        except ValueError as exc:
            raise WecdgError(f"WECDG_SEED must be an integer, got {env['WECDG_SEED']!r}") from exc
    return int(config_seed)


def build_configs(args) -> tuple[ModelConfig, TrainConfig, SDGMConfig]:
    cfg = _load_config(args.config)
    model = dict(cfg.get("model", {}))
    tr = dict(cfg.get("train", {}))
    sd = dict(cfg.get("sdgm", {}))
    seed = resolve_seed(args.seed, model.get("seed", tr.get("seed", 0)))
    model["seed"] = tr["seed"] = sd["seed"] = seed
    if args.precision is not None:
        model["precision"] = args.precision
        tr["precision"] = args.precision
    for key in ("steps", "lr", "batch"):
        if getattr(args, key, None) is not None:
            tr[key] = getattr(args, key)
    mc = ModelConfig.from_dict(model)
    sd.setdefault("dim", mc.descriptor_dim)
    return mc, TrainConfig.from_dict(tr), SDGMConfig(**sd)


def _model(args) -> WECDG:
    """Model from ``--checkpoint``, or a freshly seeded one without it."""
    if getattr(args, "checkpoint", None):
        model, _ = load_checkpoint(args.checkpoint)
        if args.precision is not None and args.precision != model.cfg.precision:
            cfg = ModelConfig.from_dict({**model.cfg.to_dict(), "precision": args.precision})
            converted = WECDG(cfg, sdgm=model.sdgm)
            converted.tree.load_state_dict(model.tree.state_dict())
            model = converted
        return model
    mc, _, sd = build_configs(args)
    return WECDG(mc, sd)


def _emit(line: str) -> None:
    print(line, flush=True)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = resolve_seed(args.seed, 0)
    m = synth_dataset(args.out, args.count, seed)
    _emit(format_record({"manifest": str(Path(args.out) / "manifest.json"), "entries": len(m), "seed": seed}))
    return 0


def cmd_train(args) -> int:
    mc, tc, sd = build_configs(args)
    manifest = read_manifest(args.manifest)
    result = train(manifest, mc, tc, sd, log=_emit)
    save_checkpoint(result.model, args.out, train_config=tc.to_dict())
    first, last = result.loss_windows()
    _emit(format_record({"checkpoint": str(args.out), "loss_first": first, "loss_last": last,
                         "params": result.model.num_params()}))
    if args.report_dir:
        from .plotting import loss_curve
        path = loss_curve(result.history, Path(args.report_dir) / "loss_curve.png",
                          sdgm_history=result.sdgm_history)
        _emit(format_record({"figure": str(path)}))
    return 0


def cmd_eval(args) -> int:
    model = _model(args)
    report = evaluate(read_manifest(args.manifest), model, args.mode)
    for line in report.lines():
        _emit(line)
    if args.report_dir:
        from .plotting import eval_bars
        out = Path(args.report_dir)
        path = eval_bars(report, out / f"eval_{args.mode}.png")
        (out / f"eval_{args.mode}.json").write_text(json.dumps(
            {"rows": report.rows, "per_image": report.per_image}, indent=2) + "\n")
        _emit(f"# figure {path}")
    return 0


def cmd_correct(args) -> int:
    model = _model(args)
    img = load_image(args.input)
    if args.mode == "manual":
        if not args.descriptor:
            raise WecdgError("--mode manual needs --descriptor")
        out = model.correct_manual(img, args.descriptor)
        rec = {"mode": "manual", "descriptor": out.meta["descriptor"]}
    else:
        out, desc, probs = model.correct_auto(img)
        rec = {"mode": "auto", "descriptor": desc.label}
        rec.update({f"p_{lb}": float(p) for lb, p in zip(BASE_LABELS, probs)})
    save_image(out, args.output)
    rec["output"] = str(args.output)
    rec["size"] = f"{out.shape[1]}x{out.shape[0]}"
    _emit(format_record(rec))
    return 0


def cmd_classify(args) -> int:
    model = _model(args)
    _emit("\t".join(["path", "label", *(f"p_{lb}" for lb in BASE_LABELS)]))
    for path in args.images:
        with T.default_dtype(model.cfg.dtype):
            desc, probs = model.sdgm.classify(load_image(path))
        _emit("\t".join([str(path), desc.label, *(f"{p:.6f}" for p in probs)]))
    return 0


def _to_visible(band: np.ndarray, detail: bool, level: int) -> np.ndarray:
    if detail:
        return np.clip(0.5 + band, 0.0, 1.0)
    return np.clip(band / 2.0 ** level, 0.0, 1.0)


def cmd_decompose(args) -> int:
    img = load_image(args.input)
    h, w = img.shape[:2]
    m = 2 ** args.levels
    if h % m or w % m:
        raise WecdgError(f"{h}x{w} is not divisible by 2^{args.levels}; crop or pad first")
    out = Path(args.out)
    with T.default_dtype(np.float64):
        levels = wavedec2(img.pixels, args.levels)
    _emit("\t".join(["level", "band", "path", "mean", "energy"]))
    for i, sb in enumerate(levels, start=1):
        for name in ("c_A", "c_H", "c_V", "c_D"):
            band = getattr(sb, name).data
            path = out / f"level{i}_{name}.png"
            save_image(_to_visible(band, name != "c_A", i), path)
            _emit(f"{i}\t{name}\t{path}\t{band.mean():.6f}\t{float((band ** 2).sum()):.6f}")
    if args.report_dir:
        from .plotting import subband_grid
        _emit(f"# figure {subband_grid(levels, Path(args.report_dir) / 'subbands.png')}")
    return 0


def cmd_swap(args) -> int:
    a, b = load_image(args.a), load_image(args.b)
    raw_a, raw_b = swap_subbands(a, b, args.which, clamp=False)
    out_a, out_b = np.clip(raw_a, 0.0, 1.0), np.clip(raw_b, 0.0, 1.0)
    rec = {"which": args.which,
           "delta_mean_a": float(raw_a.mean() - a.pixels.mean()),
           "delta_mean_b": float(raw_b.mean() - b.pixels.mean())}
    if args.which == "lf":
        rec["transfer_err_a"] = float(raw_a.mean() - b.pixels.mean())
        rec["transfer_err_b"] = float(raw_b.mean() - a.pixels.mean())
    if args.out:
        out = Path(args.out)
        save_image(out_a, out / f"a_swap_{args.which}.png")
        save_image(out_b, out / f"b_swap_{args.which}.png")
        rec["out"] = str(out)
    _emit(" ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()))
    if args.report_dir:
        from .plotting import swap_panel
        path = swap_panel(a, b, ImageBuffer(out_a), ImageBuffer(out_b), args.which,
                          Path(args.report_dir) / f"swap_{args.which}.png")
        _emit(f"# figure {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    seed = resolve_seed(args.seed, 0)
    results = run_suite(seed, args.blocks or None, args.tol)
    if args.blocks and len(results) != len(set(args.blocks)):
        from ._gradsuite import BLOCKS
        unknown = sorted(set(args.blocks) - set(BLOCKS))
        raise WecdgError(f"unknown blocks {unknown}; choose from {list(BLOCKS)}")
    _emit("\t".join(["block", "max_rel_err", "status"]))
    for r in results:
        _emit(f"{r.name}\t{r.max_rel_err:.3e}\t{'PASS' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    _emit(format_record({"seed": seed, "blocks": len(results), "failed": len(failed)}))
    return 1 if failed else 0


def cmd_paramcount(args) -> int:
    model = _model(args)
    report = param_report(model.tree)
    report["sdgm"] = model.sdgm.tree.num_params()
    for k, v in report.items():
        _emit(f"{k}\t{v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wecdg", description="Wavelet exposure correction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic exposure dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--count", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train descriptor module and restoration network")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="checkpoint path")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--report-dir", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM report on a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--mode", choices=("manual", "auto"), default="manual")
    p.add_argument("--report-dir", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("correct", help="correct one image")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--mode", choices=("auto", "manual"), default="auto")
    p.add_argument("--descriptor", help="label for manual mode, e.g. overexposed or mix(under,well,0.3)")
    p.add_argument("--checkpoint", type=Path)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("classify", help="exposure class of each image")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("decompose", help="write wavelet subband images")
    p.add_argument("input", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--report-dir", type=Path)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("swap", help="exchange low or high frequency subbands of two images")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--which", choices=("lf", "hf"), required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--report-dir", type=Path)
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--blocks", nargs="*")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("paramcount", help="parameter counts per group")
    p.add_argument("--checkpoint", type=Path)
    p.set_defaults(func=cmd_paramcount)

    for p in sub.choices.values():
        _common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "decompose" and args.levels < 1:
        parser.error("--levels must be >= 1")
    try:
        return args.func(args)
    except (WecdgError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
