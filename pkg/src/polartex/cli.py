"""Command-line entry point.

Every subcommand reads settings from built-in defaults, then an optional
``--config`` file (JSON or ``key = value`` lines), then ``--set key=value``
overrides and the dedicated flags.  Unknown keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .core.mesh import ObjError

log = logging.getLogger("polartex")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class NumericFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration

SCHEDULE_KEYS = {
    "levels": "64,128,256,512",
    "iterations": 2000,
    "batch_size": 4,
    "lr0": 1e-3,
    "lambda_tv": 1e-2,
    "lambda_zero": 1e-3,
}

DEFAULTS = {
    "synth": {
        "scene": "sphere",
        "n_views": 48,
        "image_size": 512,
        "texture_res": 256,
        "sigma": 0.002,
        "vignette_power": 4.0,
        "specular": True,
        "bumps": True,
        "diffuse_scale": "0.9,1.0,1.1",
        "alpha": None,
        "radius": 1.5,
        "fov_deg": 40.0,
        "subdivisions": 32,
        "displace": 0.0,
    },
    "fit": {
        "manifest": None,
        **SCHEDULE_KEYS,
        "iterations_stage2": None,
        "mip_weighting": True,
        "attenuation": None,
        "gt": None,
    },
    "render": {
        "manifest": None,
        "textures": None,
        "views": "all",
        "mode": "auto",
        "format": "both",
    },
    "calibrate-light": {
        "manifest": None,
        **SCHEDULE_KEYS,
        "levels": "64,128",
        "iterations": 1000,
        "lr0": 1e-2,
        "channels": 1,
        "gt_attenuation": None,
    },
    "calibrate-color": {"measured": None, "reference": None},
    "eval": {"manifest": None, "textures": None, "gt": None},
    "gradcheck": {
        "texture_res": 32,
        "image_res": 64,
        "samples": 100,
        "threshold": 1e-3,
        "corrupt": None,
    },
}

REQUIRED = {
    "fit": ("manifest",),
    "render": ("manifest", "textures"),
    "calibrate-light": ("manifest",),
    "calibrate-color": ("measured", "reference"),
    "eval": ("manifest", "textures"),
}


def parse_config_text(text: str) -> dict:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return doc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(key: str, value, default):
    """Convert a text value to the type of its default."""
    if not isinstance(value, str) or isinstance(default, str):
        return value
    low = value.lower()
    if low in ("none", "null", ""):
        return None
    if isinstance(default, bool):
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    if default is None:
        # untyped optional: numbers stay numbers, anything else is text
        for cast in (int, float):
            try:
                return cast(value)
            except ValueError:
                pass
    return value


def resolve_config(command: str, file_values: dict, overrides: dict) -> dict:
    defaults = DEFAULTS[command]
    cfg = dict(defaults)
    for source in (file_values, overrides):
        for key, value in source.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} for '{command}'")
            cfg[key] = _coerce(key, value, defaults[key])
    for key in REQUIRED.get(command, ()):
        if cfg.get(key) in (None, ""):
            raise ConfigError(f"'{command}' needs a value for {key!r}")
    return cfg


def _int_list(key, value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    if isinstance(value, int):
        return (value,)
    try:
        return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from exc


def _float_list(key, value, n=None) -> tuple:
    if isinstance(value, (list, tuple)):
        out = tuple(float(v) for v in value)
    else:
        try:
            out = tuple(float(v) for v in str(value).split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated numbers") from exc
    if n is not None and len(out) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(out)}")
    return out


def schedule_from(cfg: dict, seed: int, iterations_key: str = "iterations"):
    from .optim import ScheduleConfig

    levels = _int_list("levels", cfg["levels"])
    iters = cfg[iterations_key]
    if iters is None:
        iters = cfg["iterations"]
    iters = _int_list(iterations_key, iters)
    if len(iters) == 1:
        iters = iters * len(levels)
    try:
        return ScheduleConfig(
            levels=levels, iterations=iters, batch_size=int(cfg["batch_size"]),
            lr0=float(cfg["lr0"]), lambda_tv=float(cfg["lambda_tv"]),
            lambda_zero=float(cfg["lambda_zero"]), seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _existing(key, value) -> Path:
    p = Path(value)
    if not p.exists():
        raise FileNotFoundError(f"{key}: {p} does not exist")
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict, seed: int, workers: int, out: Path) -> int:
    from . import synth

    out.mkdir(parents=True, exist_ok=True)
    if cfg["scene"] == "sphere":
        scene = synth.make_scene(
            n_views=int(cfg["n_views"]), image_size=int(cfg["image_size"]),
            texture_res=int(cfg["texture_res"]), seed=seed, sigma=float(cfg["sigma"]),
            vignette_power=cfg["vignette_power"] or None, specular=bool(cfg["specular"]),
            bumps=bool(cfg["bumps"]), diffuse_scale=_float_list("diffuse_scale", cfg["diffuse_scale"], 3),
            alpha=cfg["alpha"], radius=float(cfg["radius"]), fov_deg=float(cfg["fov_deg"]),
            subdivisions=int(cfg["subdivisions"]), displace=float(cfg["displace"]),
        )
        modes = ("cross", "parallel")
    elif cfg["scene"] == "plane":
        scene = synth.make_plane_scene(
            n_views=int(cfg["n_views"]), image_size=int(cfg["image_size"]),
            texture_res=int(cfg["texture_res"]), seed=seed, sigma=float(cfg["sigma"]),
            vignette_power=cfg["vignette_power"] or None,
        )
        modes = ("cross",)
    else:
        raise ConfigError(f"scene must be 'sphere' or 'plane', got {cfg['scene']!r}")
    manifest = synth.render_dataset(scene, out, modes)
    print(f"wrote {manifest}")
    return EXIT_OK


def _load_scene(cfg):
    from .pipeline.scene import load_scene

    return load_scene(_existing("manifest", cfg["manifest"]))


def cmd_fit(cfg: dict, seed: int, workers: int, out: Path, stage: str) -> int:
    from .core.imageio import read_pfm
    from .optim import write_loss_csv
    from .pipeline import FitConfig, evaluate_holdout, observed_texels, prepare_views
    from .pipeline import score_textures, stage1_fit, stage2_fit
    from .synth import read_textures, write_textures

    scene = _load_scene(cfg)
    gt = read_textures(_existing("gt", cfg["gt"])) if cfg["gt"] else None
    if cfg["attenuation"]:
        att = read_pfm(_existing("attenuation", cfg["attenuation"]))
        for v in scene.views:
            v.attenuation = att
    sched1 = schedule_from(cfg, seed)
    sched2 = schedule_from(cfg, seed, "iterations_stage2")
    common = dict(mip_weighting=bool(cfg["mip_weighting"]), workers=workers,
                  light_intensity=scene.light_intensity)
    out.mkdir(parents=True, exist_ok=True)
    loss_csv = out / "loss.csv"
    if loss_csv.exists():
        loss_csv.unlink()

    cross = scene.select("cross")
    timing = {}
    t0 = time.perf_counter()
    r1 = stage1_fit(cross, scene.mesh, FitConfig(sched1, **common))
    timing["stage1"] = r1.seconds
    write_loss_csv(loss_csv, r1.logs, "1")
    tex = r1.textures
    if stage in ("2", "both"):
        par = scene.select("parallel")
        r2 = stage2_fit(par, scene.mesh, r1, FitConfig(sched2, **common))
        timing["stage2"] = r2.seconds
        write_loss_csv(loss_csv, r2.logs, "2")
        tex = r2.textures
    timing["total"] = time.perf_counter() - t0
    write_textures(tex, out / "textures")

    metrics = {"stage": stage}
    holdout = [v for v in scene.views if v.role == "holdout"]
    if stage == "1":
        holdout = [v for v in holdout if v.polarization == "cross"]
    if holdout:
        metrics["holdout"] = evaluate_holdout(tex, holdout, scene.mesh, scene.light_intensity)
    if gt is not None:
        train = prepare_views([v for v in cross if v.role == "train"], scene.mesh)
        mask = observed_texels(train, tex.resolution)
        gt_r = gt if gt.resolution == tex.resolution else _resample(gt, tex.resolution)
        metrics["texture"] = score_textures(tex, gt_r, mask)
        metrics["texture"]["observed_fraction"] = float(mask.mean())
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    (out / "timing.json").write_text(json.dumps(timing, indent=1))
    print(json.dumps(metrics.get("texture", {}), indent=1))
    if "holdout" in metrics:
        print(f"holdout PSNR {metrics['holdout']['psnr']:.2f} dB, SSIM {metrics['holdout']['ssim']:.4f}")
    return EXIT_OK


def _resample(tex, resolution):
    from .optim import resample_textures

    return resample_textures(tex, resolution)


def cmd_render(cfg: dict, seed: int, workers: int, out: Path) -> int:
    from .core.imageio import write_pfm, write_png
    from .pipeline import render_view
    from .synth import read_textures

    scene = _load_scene(cfg)
    tex = read_textures(_existing("textures", cfg["textures"]))
    if cfg["views"] == "all":
        views = scene.views
    else:
        names = [n.strip() for n in str(cfg["views"]).split(",") if n.strip()]
        try:
            views = [scene.view(n) for n in names]
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from exc
    if cfg["mode"] not in ("auto", "cross", "parallel"):
        raise ConfigError(f"mode must be auto, cross or parallel, got {cfg['mode']!r}")
    if cfg["format"] not in ("png", "pfm", "both"):
        raise ConfigError(f"format must be png, pfm or both, got {cfg['format']!r}")
    mode = None if cfg["mode"] == "auto" else cfg["mode"]
    out.mkdir(parents=True, exist_ok=True)
    for v in views:
        img, _ = render_view(tex, v, scene.mesh, mode, scene.light_intensity)
        tag = f"{v.name}_{mode or v.polarization}"
        if cfg["format"] in ("pfm", "both"):
            write_pfm(out / f"{tag}.pfm", img)
        if cfg["format"] in ("png", "both"):
            write_png(out / f"{tag}.png", img)
    print(f"rendered {len(views)} view(s) to {out}")
    return EXIT_OK


def cmd_calibrate_light(cfg: dict, seed: int, workers: int, out: Path) -> int:
    from .core.imageio import read_pfm, write_pfm, write_png
    from .pipeline import FitConfig, calibrate_attenuation

    scene = _load_scene(cfg)
    sched = schedule_from(cfg, seed)
    res = calibrate_attenuation(
        scene.select("cross"), scene.mesh,
        FitConfig(sched, workers=workers, light_intensity=scene.light_intensity),
        channels=int(cfg["channels"]),
    )
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "attenuation.pfm", res.attenuation)
    write_png(out / "attenuation.png", res.attenuation / max(res.attenuation.max(), 1e-12))
    report = {"observed_fraction": float((res.observations >= 3).mean())}
    if cfg["gt_attenuation"]:
        gt = read_pfm(_existing("gt_attenuation", cfg["gt_attenuation"]))
        seen = res.observations >= 3
        if gt.shape[2] != res.attenuation.shape[2]:
            gt = gt.mean(axis=2, keepdims=True)
        err = np.abs(res.attenuation - gt)[seen]
        report["mae"] = float(err.mean())
        report["max_error"] = float(err.max())
        print(f"attenuation MAE vs ground truth: {report['mae']:.4f} (max {report['max_error']:.4f})")
    (out / "calibration.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_calibrate_color(cfg: dict, seed: int, workers: int, out: Path) -> int:
    from .pipeline.color import fit_color_affine, read_patches

    measured = read_patches(_existing("measured", cfg["measured"]))
    reference = read_patches(_existing("reference", cfg["reference"]))
    affine = fit_color_affine(measured, reference)
    out.mkdir(parents=True, exist_ok=True)
    affine.save(out / "color_affine.json")
    resid = measured @ affine.A.T + affine.b - reference
    print(f"color affine RMS residual {np.sqrt(np.mean(resid ** 2)):.3g}")
    return EXIT_OK


def cmd_eval(cfg: dict, seed: int, workers: int, out: Path) -> int:
    from .pipeline import evaluate_holdout, observed_texels, prepare_views, score_textures
    from .synth import read_textures

    scene = _load_scene(cfg)
    tex = read_textures(_existing("textures", cfg["textures"]))
    metrics = {}
    holdout = [v for v in scene.views if v.role == "holdout"]
    if holdout:
        metrics["holdout"] = evaluate_holdout(tex, holdout, scene.mesh, scene.light_intensity)
    if cfg["gt"]:
        gt = read_textures(_existing("gt", cfg["gt"]))
        train = prepare_views([v for v in scene.select("cross") if v.role == "train"], scene.mesh)
        mask = observed_texels(train, tex.resolution)
        gt_r = gt if gt.resolution == tex.resolution else _resample(gt, tex.resolution)
        metrics["texture"] = score_textures(tex, gt_r, mask)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(cfg: dict, seed: int, workers: int, out: Path | None) -> int:
    from .grad import finite_diff_check, make_check_scene

    corrupt = None
    if cfg["corrupt"]:
        corrupt = {}
        for item in str(cfg["corrupt"]).split(","):
            if "=" not in item:
                raise ConfigError(f"corrupt: expected name=factor, got {item!r}")
            k, v = item.split("=", 1)
            corrupt[k.strip()] = float(v)
    scene = make_check_scene(int(cfg["texture_res"]), int(cfg["image_res"]), seed=seed)
    try:
        report = finite_diff_check(scene, samples=int(cfg["samples"]),
                                   threshold=float(cfg["threshold"]), seed=seed, corrupt=corrupt)
    except AttributeError as exc:
        raise ConfigError(f"corrupt: unknown gradient class in {cfg['corrupt']!r}") from exc
    for line in report.lines():
        print(line)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(report.to_json())
    if not report.passed:
        raise NumericFailure("gradient check failed")
    print("gradient check passed")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "render": cmd_render,
    "calibrate-light": cmd_calibrate_light,
    "calibrate-color": cmd_calibrate_color,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polartex", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON or key = value file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", type=Path, default=None)
        if name == "fit":
            sp.add_argument("--stage", choices=("1", "2", "both"), default="both")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    from .optim import NumericalError
    from .pipeline.color import RankDeficientError
    from .pipeline.scene import ManifestError

    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        file_values = {}
        if args.config is not None:
            if not args.config.is_file():
                raise ConfigError(f"config file not found: {args.config}")
            file_values = parse_config_text(args.config.read_text())
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        cfg = resolve_config(args.command, file_values, overrides)
        out = args.out
        if out is None and args.command != "gradcheck":
            out = Path("out") / args.command
        fn = COMMANDS[args.command]
        if args.command == "fit":
            return fn(cfg, args.seed, args.workers, out, args.stage)
        return fn(cfg, args.seed, args.workers, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NumericFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ManifestError, ObjError, RankDeficientError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
