"""Command-line entry point: ``ugcp {phantom,train,refine,eval,gradcheck,bench}``.

Every subcommand takes ``--config FILE`` (JSON, sections ``ugcp``, ``phantom``,
``opt`` and ``run``) plus ``--set section.key=value`` overrides, and writes its
outputs and a ``manifest.json`` into ``--out``.  A manifest can itself be
passed as ``--config`` to re-run with the identical resolved configuration.

Failures print one JSON error record on stderr (and to ``OUT/error.json`` when
the run directory exists) and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, backend
from .arrayio import load_params, read_array, save_params, write_array
from .errors import ArrayFileError, ConfigError, DomainError, NumericError, TrainingError, UgcpError
from .heads import UgcpConfig, config_hash, init_params
from .metrics import binarize, evaluate_cases, summarize
from .phantom import PhantomConfig, make_dataset
from .propagation import refine
from .training import OptConfig, train
from .windows import sliding_refine

EXIT_CODES = {ConfigError: 2, ArrayFileError: 3, NumericError: 4, TrainingError: 5, DomainError: 6}
SAMPLE_ARRAYS = ("gt", "centerline", "observation", "h")
SECTIONS = ("ugcp", "phantom", "opt", "run")
RUN_DEFAULTS = {
    "phantom": {"n": 20},
    "train": {"n_train": 0},
    "refine": {"patch": None, "overlap": 0.5, "overlay": "none", "dtype": "float64"},
    "eval": {"spacing": None},
    "gradcheck": {"dims": [2, 3], "Ts": [0, 1, 2, 3], "seed": 0, "wrt_h": True},
    "bench": {"shapes": None, "T": 2, "reps": 5, "backends": None, "threads": [1], "dtype": "float32"},
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ugcp", description="Uncertainty-gated conservative logit propagation tools")
    p.add_argument("--version", action="version", version=f"ugcp {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config or a previous run's manifest.json")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry; VALUE is parsed as JSON when possible")
        sp.add_argument("--out", type=Path, required=True, help="run directory to create")
        sp.add_argument("--seed", type=int, help="shortcut for the section seed")
        return sp

    sp = common(sub.add_parser("phantom", help="generate seeded phantom samples"))
    sp.add_argument("--n", type=int, help="number of samples")
    sp.add_argument("--dim", type=int, choices=(2, 3))

    sp = common(sub.add_parser("train", help="fit heads and edge vector on phantom samples"))
    sp.add_argument("--data", type=Path, required=True, help="phantom run directory")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--T", type=int)

    sp = common(sub.add_parser("refine", help="run the propagation on samples"))
    sp.add_argument("--data", type=Path, required=True, help="phantom run directory")
    sp.add_argument("--params", type=Path, help="train run directory or params directory; omit for seeded init")
    sp.add_argument("--T", type=int)
    sp.add_argument("--overlay", choices=("none", "pgm", "png"))

    sp = common(sub.add_parser("eval", help="score predictions against ground truth"))
    sp.add_argument("--pred", type=Path, required=True, help="refine run directory or a single array file")
    sp.add_argument("--gt", type=Path, required=True, help="phantom run directory or a single array file")

    sp = common(sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients"))
    sp.add_argument("--quick", action="store_true", help="2D and T in {0, 2} only")

    common(sub.add_parser("bench", help="time refinement across grid sizes and backends"))
    return p


# --- configuration ---------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if "manifest_version" in data:
        # manifests also record input paths next to the config sections
        data = {k: v for k, v in data["config"].items() if k in SECTIONS and v is not None}
    return data


def apply_overrides(cfg: dict, items) -> dict:
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.setdefault(section, {})[name] = _parse_value(value)
    return cfg


def resolve(command: str, args) -> dict:
    raw = apply_overrides(load_config(args.config), args.set)
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    run = dict(RUN_DEFAULTS[command])
    extra = set(raw.get("run", {})) - set(run)
    if extra:
        raise ConfigError(f"unknown run keys for {command}: {sorted(extra)}")
    run.update(raw.get("run", {}))
    return {"raw": raw, "run": run}


def _ugcp_cfg(section: dict, dim: int, **flags) -> UgcpConfig:
    d = dict(section)
    d.update({k: v for k, v in flags.items() if v is not None})
    unknown = set(d) - set(UgcpConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown ugcp keys: {sorted(unknown)}")
    cfg = UgcpConfig.for_dim(dim, **d)
    cfg.validate()
    return cfg


def _opt_cfg(section: dict, epochs=None) -> OptConfig:
    names = set(OptConfig.__dataclass_fields__)
    extra = set(section) - names
    if extra:
        raise ConfigError(f"unknown opt keys: {sorted(extra)}")
    opt = OptConfig(**section)
    if epochs is not None:
        opt.epochs = epochs
    if opt.epochs < 0 or opt.lr <= 0 or opt.batch_size < 0:
        raise ConfigError("opt needs epochs >= 0, lr > 0, batch_size >= 0")
    return opt


# --- run directories ---------------------------------------------------------

def versions() -> dict:
    import scipy
    import skimage

    return {"ugcp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-image": skimage.__version__}


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, np.ndarray)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_manifest(out: Path, command: str, config: dict, seed, outputs, seconds: float, extra=None) -> dict:
    config = json.loads(json.dumps(config, default=_json_default))
    manifest = {
        "manifest_version": 1,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": versions(),
        "backend": backend.get().NAME,
        "threads": backend.num_threads(),
        "outputs": sorted(str(p) for p in outputs),
        "seconds": round(seconds, 3),
    }
    if extra:
        manifest.update(extra)
    dump_json(out / "manifest.json", manifest)
    return manifest


def sample_dirs(root: Path) -> list[Path]:
    base = root / "samples" if (root / "samples").is_dir() else root
    dirs = sorted(p for p in base.iterdir() if p.is_dir()) if base.is_dir() else []
    if not dirs:
        raise ConfigError(f"{root}: no sample directories found")
    return dirs


def read_sample(d: Path, names=SAMPLE_ARRAYS) -> dict:
    out = {}
    for name in names:
        path = d / f"{name}.ugcp"
        if not path.is_file():
            raise ConfigError(f"{d}: missing {name}.ugcp")
        out[name] = read_array(path)
    return out


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


# --- overlays -----------------------------------------------------------------

def _slice2d(a: np.ndarray) -> np.ndarray:
    while a.ndim > 2:
        a = a[a.shape[0] // 2]
    return a


def overlay_rgb(observation, mask, u) -> np.ndarray:
    """Side-by-side panels: observation with the mask in red, and the uncertainty map."""
    obs = np.clip(_slice2d(np.asarray(observation, dtype=np.float64)), 0, 1)
    m = _slice2d(np.asarray(mask, dtype=bool))
    uu = np.clip(_slice2d(np.asarray(u, dtype=np.float64)), 0, 1)
    left = np.stack([obs, obs, obs], axis=-1)
    left[m] = 0.5 * left[m] + 0.5 * np.array([1.0, 0.0, 0.0])
    right = np.stack([uu, 0.5 * (1 - np.abs(2 * uu - 1)), 1 - uu], axis=-1)
    gap = np.ones((obs.shape[0], 2, 3))
    return np.round(255 * np.concatenate([left, gap, right], axis=1)).astype(np.uint8)


def write_overlay(path: Path, rgb: np.ndarray, fmt: str) -> Path:
    if fmt == "png":
        try:
            from PIL import Image
        except ImportError:
            raise ConfigError("PNG overlays need Pillow; install the 'plot' extra or use overlay=pgm") from None
        path = path.with_suffix(".png")
        Image.fromarray(rgb, "RGB").save(path)
        return path
    path = path.with_suffix(".pgm")
    gray = np.round(rgb @ np.array([0.299, 0.587, 0.114])).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())
    return path


# --- subcommands ----------------------------------------------------------------

def cmd_phantom(args, resolved) -> dict:
    raw, run = resolved["raw"], resolved["run"]
    section = dict(raw.get("phantom", {}))
    if args.dim is not None:
        section["dim"] = args.dim
    if args.seed is not None:
        section["seed"] = args.seed
    if args.n is not None:
        run["n"] = args.n
    unknown = set(section) - set(PhantomConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown phantom keys: {sorted(unknown)}")
    pcfg = PhantomConfig.for_dim(section.pop("dim", 2), **section)
    if int(run["n"]) < 1:
        raise ConfigError("run.n must be at least 1")
    samples = make_dataset(int(run["n"]), pcfg)
    outputs = []
    for i, smp in enumerate(samples):
        d = args.out / "samples" / f"sample_{i:04d}"
        d.mkdir(parents=True)
        for name in SAMPLE_ARRAYS:
            outputs.append(write_array(getattr(smp, name), d / f"{name}.ugcp").relative_to(args.out))
        dump_json(d / "sample.json", {"index": i, "seed": smp.seed})
    config = {"phantom": pcfg.to_dict(), "run": run}
    return {"config": config, "seed": pcfg.seed, "outputs": outputs}


def _train_inputs(args, run):
    dirs = sample_dirs(args.data)
    n = int(run.get("n_train") or 0)
    if n:
        dirs = dirs[:n]
    pairs = []
    for d in dirs:
        s = read_sample(d, ("h", "gt"))
        pairs.append((s["h"].astype(np.float64), s["gt"].astype(bool)))
    return pairs


def cmd_train(args, resolved) -> dict:
    raw, run = resolved["raw"], resolved["run"]
    pairs = _train_inputs(args, run)
    dim = pairs[0][0].ndim - 1
    ucfg = _ugcp_cfg(raw.get("ugcp", {}), dim, T=args.T, seed=args.seed, C_h=pairs[0][0].shape[0])
    opt = _opt_cfg(raw.get("opt", {}), args.epochs)
    fit = train(pairs, ucfg, opt)
    out = args.out
    save_params(fit.params, out / "params", {"seed": ucfg.seed, "config_hash": ucfg.digest(),
                                             "ugcp": ucfg.to_dict()})
    rows = [{"epoch": i, **loss.as_row()} for i, loss in enumerate(fit.curve[:-1])]
    rows.append({"epoch": "final", **fit.curve[-1].as_row()})
    _write_csv(out / "loss_curve.csv", rows)
    outputs = [Path("loss_curve.csv")] + [p.relative_to(out) for p in (out / "params").iterdir()]
    config = {"ugcp": ucfg.to_dict(), "opt": opt.to_dict(), "run": run}
    return {"config": config, "seed": ucfg.seed, "outputs": outputs,
            "extra": {"final_loss": fit.curve[-1].as_row(), "n_train": len(pairs)}}


def _resolve_params(path: Path | None, cfg: UgcpConfig):
    if path is None:
        return init_params(cfg.seed, cfg.C_h, cfg.C_f, cfg.K), {}
    pdir = path / "params" if (path / "params").is_dir() else path
    return load_params(pdir)


def cmd_refine(args, resolved) -> dict:
    raw, run = resolved["raw"], resolved["run"]
    if args.overlay is not None:
        run["overlay"] = args.overlay
    dirs = sample_dirs(args.data)
    first = read_sample(dirs[0], ("h",))["h"]
    section = dict(raw.get("ugcp", {}))
    if args.params is not None and not section:
        pdir = args.params / "params" if (args.params / "params").is_dir() else args.params
        sidecar = json.loads((pdir / "params.json").read_text()) if (pdir / "params.json").is_file() else {}
        section = dict(sidecar.get("ugcp", {}))
    ucfg = _ugcp_cfg(section, first.ndim - 1, T=args.T, seed=args.seed, C_h=first.shape[0])
    params, side = _resolve_params(args.params, ucfg)
    if params.C_h != ucfg.C_h or params.C_f != ucfg.C_f or params.K != ucfg.K:
        raise ConfigError("parameter shapes do not match the ugcp config")
    dtype = np.dtype(run["dtype"])
    if dtype not in (np.float32, np.float64):
        raise ConfigError("run.dtype must be float32 or float64")
    outputs = []
    for d in dirs:
        h = read_sample(d, ("h",))["h"].astype(dtype)
        if run["patch"]:
            res = sliding_refine(h, params, ucfg, run["patch"], float(run["overlap"]))
        else:
            res = refine(h, params, ucfg)
        od = args.out / "samples" / d.name
        od.mkdir(parents=True)
        mask = binarize(res.pi[1])
        for name, arr in (("pi", res.pi), ("u", res.u), ("s", res.s), ("mask", mask)):
            outputs.append(write_array(arr, od / f"{name}.ugcp").relative_to(args.out))
        if run["overlay"] != "none":
            obs_path = d / "observation.ugcp"
            obs = read_array(obs_path)[0] if obs_path.is_file() else h[0]
            img = write_overlay(od / "overlay", overlay_rgb(obs, mask, res.u[0]), run["overlay"])
            outputs.append(img.relative_to(args.out))
    config = {"ugcp": ucfg.to_dict(), "run": run,
              "params_source": None if args.params is None else str(args.params)}
    return {"config": config, "seed": ucfg.seed, "outputs": outputs,
            "extra": {"params_config_hash": side.get("config_hash")}}


def _pred_mask(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(bool)
    if arr.ndim >= 3 and arr.shape[0] == 2:
        return binarize(arr[1])
    return binarize(arr)


def _pairs_for_eval(pred: Path, gt: Path):
    if pred.is_file() and gt.is_file():
        return [(pred.stem, _pred_mask(read_array(pred)), read_array(gt).astype(bool))]
    if pred.is_file() or gt.is_file():
        raise ConfigError("--pred and --gt must both be files or both be run directories")
    gts = {d.name: d for d in sample_dirs(gt)}
    out = []
    for d in sample_dirs(pred):
        if d.name not in gts:
            raise ConfigError(f"no ground truth for prediction {d.name}")
        src = d / "mask.ugcp" if (d / "mask.ugcp").is_file() else d / "pi.ugcp"
        if not src.is_file():
            raise ConfigError(f"{d}: neither mask.ugcp nor pi.ugcp present")
        out.append((d.name, _pred_mask(read_array(src)), read_sample(gts[d.name], ("gt",))["gt"].astype(bool)))
    return out


def cmd_eval(args, resolved) -> dict:
    run = resolved["run"]
    reports = evaluate_cases(_pairs_for_eval(args.pred, args.gt), run["spacing"])
    _write_csv(args.out / "metrics.csv", [r.row() for r in reports])
    summary = summarize(reports)
    dump_json(args.out / "summary.json", summary)
    config = {"run": run, "pred": str(args.pred), "gt": str(args.gt)}
    return {"config": config, "seed": None, "outputs": [Path("metrics.csv"), Path("summary.json")],
            "extra": {"summary": summary}}


class GradcheckFailed(UgcpError):
    pass


def cmd_gradcheck(args, resolved) -> dict:
    from .gradcheck import gradcheck

    raw, run = resolved["raw"], resolved["run"]
    if args.quick:
        run.update(dims=[2], Ts=[0, 2])
    if args.seed is not None:
        run["seed"] = args.seed
    base = UgcpConfig.from_dict(raw["ugcp"]) if raw.get("ugcp") else None
    report = gradcheck(base, dims=tuple(run["dims"]), Ts=tuple(run["Ts"]), seed=int(run["seed"]),
                       wrt_h=bool(run["wrt_h"]))
    dump_json(args.out / "gradcheck.json", report.to_dict())
    result = {"config": {"run": run, "ugcp": None if base is None else base.to_dict()},
              "seed": run["seed"], "outputs": [Path("gradcheck.json")],
              "extra": {"passed": report.passed, "worst_relative_error": report.worst}}
    if not report.passed:
        result["error"] = GradcheckFailed(f"worst relative error {report.worst:.3e} exceeds tolerance")
    return result


def cmd_bench(args, resolved) -> dict:
    from .bench import bench, doubling_shapes

    run = resolved["run"]
    shapes = [tuple(s) for s in run["shapes"]] if run["shapes"] else doubling_shapes()
    report = bench(shapes, T=int(run["T"]), reps=int(run["reps"]), backends=run["backends"],
                   threads=tuple(run["threads"]), dtype=np.dtype(run["dtype"]))
    dump_json(args.out / "bench.json", report)
    _write_csv(args.out / "bench.csv", report["rows"])
    return {"config": {"run": run}, "seed": None, "outputs": [Path("bench.json"), Path("bench.csv")]}


COMMANDS = {"phantom": cmd_phantom, "train": cmd_train, "refine": cmd_refine, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def error_record(exc: BaseException, command: str | None) -> dict:
    code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
    if isinstance(exc, UsageError):
        code = 2
    return {"error": {"type": type(exc).__name__, "message": str(exc), "command": command, "exit_code": code}}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command, out = None, None
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        command = args.command
        if command is None:
            raise UsageError("missing subcommand; choose from " + ", ".join(COMMANDS))
        out = args.out
        if out.exists() and any(out.iterdir()):
            raise ConfigError(f"run directory {out} exists and is not empty")
        resolved = resolve(command, args)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        result = COMMANDS[command](args, resolved)
        write_manifest(out, command, result["config"], result["seed"], result["outputs"],
                       time.perf_counter() - t0, result.get("extra"))
        if "error" in result:
            raise result["error"]
        print(json.dumps({"ok": True, "command": command, "out": str(out)}))
        return 0
    except (UgcpError, ValueError, OSError, KeyError, TypeError) as exc:
        record = error_record(exc, command)
        if out is not None and out.is_dir():
            dump_json(out / "error.json", record)
        print(json.dumps(record), file=sys.stderr)
        return record["error"]["exit_code"]
