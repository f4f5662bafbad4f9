"""Command-line interface: synth, degrade, restore, evaluate, export-png.

Exit codes: 0 success, 2 usage or validation problem, 3 infeasible sampler
configuration, 1 internal error. Progress lines go to stderr; results go to
stdout. Every command is deterministic given its flags and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube import HSICube, RANGE_UNIT01, load_cube, save_cube
from .errors import ContractError, CubeFormatError, FeasibilityError

_TASKS = ("denoise", "complete", "sr")
_TASK_DEFAULT_T = {"complete": 3000, "denoise": 1000, "sr": 1000}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat restoration settings, one key per line in config files."""

    task: str = "denoise"
    T: int | None = None
    t0: int | None = None
    eta: float = 0.95
    eta_b: float = 1.0
    beta_1: float = 1e-4
    beta_T: float = 2e-3
    sigma_convention: str = "snr"
    unit_scale: bool = True
    rank: int = 5
    learning_rate: float = 3e-4
    iters_per_step: int = 10
    seed: int = 0

    def resolve(self) -> "RunConfig":
        """Fill task-dependent defaults: T per task, then t0 = T // 2."""
        if self.task not in _TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        out = dataclasses.replace(self)
        if out.T is None:
            out.T = _TASK_DEFAULT_T[out.task]
        if out.t0 is None:
            out.t0 = out.T // 2
        return out


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(key: str, raw: str, typ) -> object:
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[raw.lower()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse `key=value` lines ('#' comments allowed) over the defaults."""
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        typ = {"T": int, "t0": int}.get(key)
        if typ is None:
            typ = type(getattr(RunConfig(), key))
        setattr(cfg, key, _parse_value(key, value, typ))
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _flat_signed(cube: HSICube) -> np.ndarray:
    """Flat signed11 values of a nominal unit01 cube, without clamping."""
    if cube.range_tag != RANGE_UNIT01:
        raise ContractError(f"expected a unit01 cube, got {cube.range_tag}")
    return 2.0 * cube.values.astype(np.float64) - 1.0


def _unit_cube(x_signed: np.ndarray, shape: tuple[int, int, int]) -> HSICube:
    vals = ((np.asarray(x_signed, dtype=np.float64) + 1.0) / 2.0).astype(np.float32)
    return HSICube(shape[0], shape[1], shape[2], vals, RANGE_UNIT01)


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"dims must look like 32x32x8, got {text!r}")
    try:
        h, w, b = (int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"dims must be integers: {text!r}") from exc
    return h, w, b


def cmd_synth(args) -> int:
    from .synth import SynthSpec, make_synthetic

    spec = SynthSpec(
        _parse_dims(args.dims), rank=args.rank, smoothness=args.smoothness, seed=args.seed
    )
    cube, maps, spectra = make_synthetic(spec)
    out = Path(args.output)
    save_cube(cube, out)
    save_cube(HSICube.from_array(maps, RANGE_UNIT01), Path(str(out) + ".abunds"))
    sidecar = {
        "dims": list(spec.shape),
        "rank": spec.rank,
        "smoothness": spec.smoothness,
        "seed": spec.seed,
        "spectra": [[float(v) for v in spectra[:, r]] for r in range(spec.rank)],
    }
    with open(str(out) + ".factors.json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
    return 0


def cmd_degrade(args) -> int:
    from .operators import NoiseSpec, add_noise, make_completion, make_denoise, make_mask, make_sr_block

    gt = load_cube(args.gt)
    shape = gt.shape
    x = _flat_signed(gt)
    sigma_y = 2.0 * args.sigma  # unit01 level on the CLI, signed11 internally
    mask_seed_seq, noise_seed_seq = np.random.SeedSequence(args.seed).spawn(2)
    noise = NoiseSpec(sigma_y, seed=int(noise_seed_seq.generate_state(1)[0]))
    out = Path(args.output)
    sidecar = {
        "task": args.task,
        "sigma": args.sigma,
        "sigma_y": sigma_y,
        "seed": args.seed,
        "gt_dims": list(shape),
    }

    if args.task == "denoise":
        y = add_noise(x, noise)
        save_cube(_unit_cube(y, shape), out)
    elif args.task == "complete":
        if args.mask is not None:
            mask = load_cube(args.mask).array() > 0.5
            mask_path = Path(args.mask)
        else:
            if args.rate is None:
                raise ConfigError("completion needs --rate or --mask")
            mask = make_mask(shape, args.rate, int(mask_seed_seq.generate_state(1)[0]))
            mask_path = Path(str(out) + ".mask")
            save_cube(HSICube.from_array(mask.astype(np.float32), RANGE_UNIT01), mask_path)
            sidecar["sampling_rate"] = args.rate
        op = make_completion(mask, shape)
        y = add_noise(op.apply(x), noise)
        # unobserved voxels render as unit01 zero; the sampler never reads them
        arr = np.zeros(op.n, dtype=np.float32)
        arr[op.observed] = ((y + 1.0) / 2.0).astype(np.float32)
        save_cube(HSICube(shape[0], shape[1], shape[2], arr, RANGE_UNIT01), out)
        sidecar["mask"] = mask_path.name if mask_path.parent == out.parent else str(mask_path)
    elif args.task == "sr":
        op = make_sr_block(shape, args.scale)
        y = add_noise(op.apply(x), noise)
        small = (shape[0] // args.scale, shape[1] // args.scale, shape[2])
        save_cube(_unit_cube(y, small), out)
        sidecar["scale"] = args.scale
    else:
        raise ConfigError(f"unknown task {args.task!r}")

    with open(str(out) + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
    return 0


def _build_operator(sidecar: dict, sidecar_dir: Path):
    from .operators import make_completion, make_denoise, make_sr_block

    shape = tuple(int(d) for d in sidecar["gt_dims"])
    task = sidecar["task"]
    if task == "denoise":
        return make_denoise(shape), shape
    if task == "complete":
        mask_path = Path(sidecar["mask"])
        if not mask_path.is_absolute():
            mask_path = sidecar_dir / mask_path
        mask = load_cube(mask_path).array() > 0.5
        return make_completion(mask, shape), shape
    if task == "sr":
        return make_sr_block(shape, int(sidecar["scale"])), shape
    raise ConfigError(f"sidecar names unknown task {task!r}")


def cmd_restore(args) -> int:
    cfg = RunConfig()
    if args.config is not None:
        cfg = parse_config(Path(args.config).read_text(), cfg)
    cfg = cfg.resolve()
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return 0

    from .mixture import FitConfig
    from .sampler import SamplerConfig, restore, restore_no_diffusion
    from .schedule import make_linear_schedule

    sidecar_path = Path(args.sidecar) if args.sidecar else Path(str(args.observation) + ".json")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    if sidecar["task"] != cfg.task:
        raise ConfigError(
            f"sidecar task {sidecar['task']!r} does not match config task {cfg.task!r}"
        )
    op, shape = _build_operator(sidecar, sidecar_path.parent)
    obs = load_cube(args.observation)

    if cfg.task == "complete":
        if obs.shape != shape:
            raise ConfigError(f"observation dims {obs.shape} do not match gt dims {shape}")
        y = op.apply(_flat_signed(obs))
    else:
        if cfg.task == "sr":
            p = int(sidecar["scale"])
            expected = (shape[0] // p, shape[1] // p, shape[2])
        else:
            expected = shape
        if obs.shape != expected:
            raise ConfigError(
                f"observation dims {obs.shape} do not match expected {expected}"
            )
        y = _flat_signed(obs)

    schedule = make_linear_schedule(cfg.T, cfg.beta_1, cfg.beta_T, cfg.sigma_convention)
    sampler_cfg = SamplerConfig(
        schedule=schedule,
        t0=cfg.t0,
        eta=cfg.eta,
        eta_b=cfg.eta_b,
        sigma_y=float(sidecar["sigma_y"]),
        rank=cfg.rank,
        unit_scale=cfg.unit_scale,
        fit=FitConfig(learning_rate=cfg.learning_rate, iters_per_step=cfg.iters_per_step),
        seed=cfg.seed,
    )

    def progress(t, loss, elapsed):
        print(f"t={t} loss={loss:.6f} elapsed={elapsed:.3f}", file=sys.stderr)

    if args.ablate_no_diffusion:
        x0 = restore_no_diffusion(y, op, sampler_cfg, progress=progress)
    else:
        x0 = restore(y, op, sampler_cfg, progress=progress)
    save_cube(_unit_cube(x0, shape), args.output)
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    ref = load_cube(args.ref)
    est = load_cube(args.est)
    report = evaluate(ref, est)
    print(f"MPSNR={report.mpsnr:.6f} MSSIM={report.mssim:.6f}")
    return 0


def cmd_export_png(args) -> int:
    from .cube import export_band_png

    export_band_png(load_cube(args.cube), args.band, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsidiff",
        description="Self-supervised diffusion restoration for hyperspectral cubes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic low-rank ground-truth cube")
    p.add_argument("--dims", required=True, help="cube dimensions, e.g. 32x32x8")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--smoothness", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="apply a degradation with Gaussian noise")
    p.add_argument("gt", help="ground-truth cube file")
    p.add_argument("--task", required=True, choices=_TASKS)
    p.add_argument("--sigma", type=float, default=0.0, help="noise level in [0,1] range")
    p.add_argument("--rate", type=float, default=None, help="completion sampling rate")
    p.add_argument("--mask", default=None, help="completion mask cube file")
    p.add_argument("--scale", type=int, default=2, help="super-resolution factor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="run the reverse diffusion restoration")
    p.add_argument("observation", help="degraded cube file")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--sidecar", default=None, help="degradation sidecar (default: <obs>.json)")
    p.add_argument("--ablate-no-diffusion", action="store_true")
    p.add_argument("--print-config", action="store_true")
    p.add_argument("-o", "--output", default="restored.hsic")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="band-wise PSNR/SSIM between two cubes")
    p.add_argument("ref")
    p.add_argument("est")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-png", help="write one band as 8-bit grayscale PNG")
    p.add_argument("cube")
    p.add_argument("--band", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export_png)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FeasibilityError as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ContractError, CubeFormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: bad sidecar: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
