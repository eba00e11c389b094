"""Command-line front end for batch measurement processing and simulation.

Subcommands: ingest | pathloss | cir | simulate | report.  Every run writes
a manifest recording input digests, the resolved configuration digest, the
seed and the produced files, so identical inputs reproduce byte-identical
outputs.  Exit codes: 0 success, 2 input/parse error, 3 analysis error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel_models import (
    SURFACE_PRESETS,
    LambertianScene,
    PathLossModel,
    SurfaceParams,
    lambertian_gain_total,
    path_loss_db,
)
from .measurement_pipeline import (
    ParseError,
    SweepMeta,
    average_realizations,
    cir_from_sweep,
    cir_to_csv,
    fwhm,
    parse_sweep_csv,
    parse_touchstone,
    path_loss_from_sweep,
    write_sweep_csv,
)
from .model_fitting import PathLossDataset, fit_path_loss, fit_wdgf
from .simulation_harness import (
    ScenarioConfig,
    TargetNotBracketedError,
    achievable_distance,
    pl_ref_for_surface,
    calibrate_los_ref_gain,
    run_ber_vs_distance,
    scenario_preset,
)

DATA_DIR_ENV = "VVLC_DATA_DIR"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ANALYSIS = 3


class ConfigError(ValueError):
    """Invalid command or scenario configuration."""


def _data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _write_manifest(out_dir: Path, command: str, inputs, config: dict, outputs, seed=None) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "inputs": {str(p): _sha256(Path(p).read_bytes()) for p in sorted(str(q) for q in inputs)},
        "config_sha256": _sha256(_canonical_json(config).encode()),
        "config": config,
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out_dir / f"{command}_manifest.json"
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(x: float) -> str:
    return f"{x:.12g}"


# --------------------------------------------------------------------------
# ingest

def _collect_inputs(paths, fmt):
    exts = {"s2p": (".s2p",), "csv": (".csv",), "auto": (".s2p", ".csv")}[fmt]
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in exts))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"input not found: {p}")
    if not files:
        raise ConfigError("no input files")
    return files


def cmd_ingest(args) -> int:
    files = _collect_inputs(args.inputs, args.format)
    records = []
    realization = args.realization_start
    for path in files:
        data = path.read_bytes()
        try:
            if path.suffix.lower() == ".s2p":
                meta = SweepMeta(args.surface, args.d1, args.d2, realization, args.link)
                parsed = parse_touchstone(data, meta)
                realization += 1
            else:
                parsed = parse_sweep_csv(data)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        records.extend(parsed)

    out = Path(args.out) if args.out else _data_dir() / "sweeps.csv"
    _write_text(out, write_sweep_csv(records))

    locations = {}
    for rec in records:
        locations.setdefault(rec.meta.location_key(), []).append(rec)
    print(f"ingested {len(records)} sweep record(s) from {len(files)} file(s) -> {out}")
    for key in sorted(locations):
        recs = locations[key]
        grid = recs[0]
        print(
            f"  {key[0]} d1={_fmt(key[1])} m d2={_fmt(key[2])} m {key[3]}: "
            f"{len(recs)} realization(s), {grid.n_points} points, "
            f"{_fmt(grid.f_min)}-{_fmt(grid.f_max)} Hz step {_fmt(grid.delta_f)} Hz"
        )
    config = {
        "format": args.format,
        "surface": args.surface,
        "d1": args.d1,
        "d2": args.d2,
        "link": args.link,
        "realization_start": args.realization_start,
    }
    _write_manifest(out.parent, "ingest", files, config, [out])
    return EXIT_OK


# --------------------------------------------------------------------------
# pathloss

def _load_store(path: Path):
    if not path.exists():
        raise ConfigError(f"store not found: {path}")
    return parse_sweep_csv(path.read_bytes())


def _scene_from_dict(d: dict) -> LambertianScene:
    keys = (
        "m", "a_r", "da_r", "rho", "phi", "alpha_ang", "beta_ang",
        "psi", "psi_c", "t_s", "n_refr",
    )
    try:
        return LambertianScene(**{k: float(d[k]) for k in keys if k in d})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scene file: {exc}") from exc


def _lambertian_pl_db(scene_doc: dict, d2: float) -> float:
    patches = scene_doc.get("patches") or [{}]
    triples = []
    for patch in patches:
        merged = {**scene_doc, **patch}
        merged.pop("patches", None)
        d1 = float(merged.pop("d1_m", 1.0))
        triples.append((_scene_from_dict(merged), d1, d2))
    total = lambertian_gain_total(triples)
    if total <= 0.0:
        raise ValueError("Lambertian scene gain is zero; path loss undefined")
    return -20.0 * math.log10(total)


def cmd_pathloss(args) -> int:
    store_path = Path(args.store) if args.store else _data_dir() / "sweeps.csv"
    records = _load_store(store_path)
    selected = [r for r in records if r.meta.surface == args.surface and r.meta.link == "nlos"]
    if not selected:
        raise ValueError(f"no matching sweeps for surface {args.surface!r}")

    by_location = {}
    for rec in selected:
        by_location.setdefault(rec.meta.location_key(), []).append(rec)

    scene_doc = None
    inputs = [store_path]
    if args.scene:
        scene_path = Path(args.scene)
        if not scene_path.exists():
            raise ConfigError(f"scene file not found: {scene_path}")
        scene_doc = json.loads(scene_path.read_text())
        inputs.append(scene_path)

    rows = []
    for key in sorted(by_location, key=lambda k: k[2]):
        avg = average_realizations(by_location[key])
        rows.append((key[2], path_loss_from_sweep(avg)))

    dataset = PathLossDataset(
        distances_m=tuple(r[0] for r in rows),
        pl_db=tuple(r[1] for r in rows),
        d0=args.d0,
        pl_ref=args.pl_ref,
    )
    report = fit_path_loss(dataset)
    fitted = PathLossModel(report.params, args.d0, args.pl_ref)

    out_dir = Path(args.out_dir)
    csv_lines = ["d_m,pl_db,pl_model_db,pl_lambertian_db"]
    for d, pl in rows:
        model_pl = path_loss_db(fitted, d)
        lam = _fmt(_lambertian_pl_db(scene_doc, d)) if scene_doc is not None else ""
        csv_lines.append(f"{_fmt(d)},{_fmt(pl)},{_fmt(model_pl)},{lam}")
    csv_path = out_dir / f"pathloss_{args.surface}.csv"
    _write_text(csv_path, "\n".join(csv_lines) + "\n")

    fit_path = out_dir / f"pathloss_fit_{args.surface}.json"
    _write_text(fit_path, report.to_json())

    p = report.params
    print(
        f"{args.surface}: {len(rows)} distances, fitted alpha={p.alpha:.6g} "
        f"beta={p.beta:.6g} n={p.n:.6g}, rmse={report.rmse:.4g} dB, "
        f"converged={report.converged}"
    )
    config = {"surface": args.surface, "d0": args.d0, "pl_ref": args.pl_ref,
              "scene": bool(scene_doc)}
    _write_manifest(out_dir, "pathloss", inputs, config, [csv_path, fit_path])
    return EXIT_OK


# --------------------------------------------------------------------------
# cir

def _slug(key) -> str:
    surface, d1, d2, link = key
    return f"{surface}_{link}_d{_fmt(d2)}m"


def cmd_cir(args) -> int:
    store_path = Path(args.store) if args.store else _data_dir() / "sweeps.csv"
    records = _load_store(store_path)
    if args.surface:
        records = [r for r in records if r.meta.surface == args.surface]
    if not records:
        raise ValueError("no matching sweeps")

    by_location = {}
    for rec in records:
        by_location.setdefault(rec.meta.location_key(), []).append(rec)

    out_dir = Path(args.out_dir)
    window = None if args.window == "none" else args.window
    outputs = []
    summaries = {}
    for key in sorted(by_location):
        avg = average_realizations(by_location[key])
        f_target = args.f_target if args.f_target else avg.f_min + 1.0 / args.t_res
        cir = cir_from_sweep(avg, f_target, window=window)
        cir_path = out_dir / f"cir_{_slug(key)}.csv"
        _write_text(cir_path, cir_to_csv(cir))
        outputs.append(cir_path)
        width = fwhm(cir)
        summaries.setdefault((key[0], key[3]), []).append((key[2], width))
        print(
            f"{_slug(key)}: t_res={_fmt(cir.t_res)} s, peak at {_fmt(cir.peak_time)} s, "
            f"fwhm={_fmt(width * 1e9)} ns"
        )
        if args.fit_wdgf:
            report = fit_wdgf(cir)
            fit_path = out_dir / f"wdgf_{_slug(key)}.json"
            _write_text(fit_path, report.to_json())
            outputs.append(fit_path)

    for (surface, link), rows in sorted(summaries.items()):
        lines = ["d_m,fwhm_ns"]
        for d, width in sorted(rows):
            lines.append(f"{_fmt(d)},{_fmt(width * 1e9)}")
        summary_path = out_dir / f"fwhm_{surface}_{link}.csv"
        _write_text(summary_path, "\n".join(lines) + "\n")
        outputs.append(summary_path)

    config = {
        "surface": args.surface,
        "f_target": args.f_target,
        "t_res": args.t_res,
        "window": args.window,
        "fit_wdgf": bool(args.fit_wdgf),
    }
    _write_manifest(out_dir, "cir", [store_path], config, outputs)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

def _surface_from_doc(doc) -> SurfaceParams:
    if isinstance(doc, str):
        if doc not in SURFACE_PRESETS:
            raise ConfigError(f"scenario: unknown surface preset {doc!r}")
        return SURFACE_PRESETS[doc]
    if isinstance(doc, dict):
        try:
            return SurfaceParams(
                label=str(doc.get("label", "custom")),
                alpha=float(doc["alpha"]),
                beta=float(doc["beta"]),
                n=float(doc["n"]),
                rho=float(doc["rho"]) if "rho" in doc else None,
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"scenario: bad surface definition: {exc}") from exc
    raise ConfigError("scenario: 'surface' must be a preset name or a coefficient object")


def _distances_from_doc(doc) -> tuple:
    if isinstance(doc, list):
        return tuple(float(v) for v in doc)
    if isinstance(doc, dict):
        try:
            start, stop, step = float(doc["start"]), float(doc["stop"]), float(doc["step"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"scenario: bad distances_m range: {exc}") from exc
        if step <= 0 or stop < start:
            raise ConfigError("scenario: distances_m range needs step > 0 and stop >= start")
        return tuple(np.arange(start, stop + step / 2, step))
    raise ConfigError("scenario: 'distances_m' must be a list or a {start, stop, step} object")


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    """Validated ScenarioConfig from a scenario JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario file must contain a JSON object")
    known = {
        "surface", "d0_m", "pl_ref_db", "los_ref_gain", "distances_m", "m_order",
        "noise_dbm", "p_t_dbm", "responsivity", "n_sub", "n_cp", "target_ber",
        "min_errors", "max_bits", "seed", "refine", "refine_tol_m",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"scenario: unknown keys: {', '.join(sorted(unknown))}")
    for key in ("surface", "distances_m"):
        if key not in doc:
            raise ConfigError(f"scenario: missing required key '{key}'")

    surface = _surface_from_doc(doc["surface"])
    d0 = float(doc.get("d0_m", 2.0))
    pl_ref = doc.get("pl_ref_db")
    if pl_ref is None:
        if surface.rho is None:
            raise ConfigError("scenario: need pl_ref_db, or a surface with rho plus los_ref_gain")
        los_gain = doc.get("los_ref_gain")
        los_gain = float(los_gain) if los_gain is not None else calibrate_los_ref_gain()
        pl_ref = pl_ref_for_surface(surface.rho, los_gain)

    try:
        return ScenarioConfig(
            surface=surface,
            path_loss=PathLossModel(surface, d0, float(pl_ref)),
            distances_m=_distances_from_doc(doc["distances_m"]),
            m_order=int(doc.get("m_order", 4)),
            noise_power_dbm=float(doc.get("noise_dbm", -100.0)),
            p_t_dbm=float(doc.get("p_t_dbm", -12.0)),
            responsivity=float(doc.get("responsivity", 0.3)),
            n_sub=int(doc.get("n_sub", 64)),
            n_cp=int(doc.get("n_cp", 4)),
            target_ber=float(doc.get("target_ber", 1e-3)),
            min_errors=int(doc.get("min_errors", 100)),
            max_bits=int(doc.get("max_bits", 10_000_000)),
            seed=int(doc.get("seed", 0)),
            refine=bool(doc.get("refine", True)),
            refine_tol_m=float(doc.get("refine_tol_m", 0.05)),
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def _scenario_config_dict(scenario: ScenarioConfig) -> dict:
    s = scenario.surface
    return {
        "surface": {"label": s.label, "alpha": s.alpha, "beta": s.beta, "n": s.n, "rho": s.rho},
        "d0_m": scenario.path_loss.d0,
        "pl_ref_db": scenario.path_loss.pl_ref,
        "distances_m": list(scenario.distances_m),
        "m_order": scenario.m_order,
        "noise_dbm": scenario.noise_power_dbm,
        "p_t_dbm": scenario.p_t_dbm,
        "responsivity": scenario.responsivity,
        "n_sub": scenario.n_sub,
        "n_cp": scenario.n_cp,
        "target_ber": scenario.target_ber,
        "min_errors": scenario.min_errors,
        "max_bits": scenario.max_bits,
        "seed": scenario.seed,
        "refine": scenario.refine,
        "refine_tol_m": scenario.refine_tol_m,
    }


PRESET_NAMES = tuple(
    f"{cond}-{surface}" for cond in ("day", "night") for surface in ("white", "orange", "black")
)


def cmd_simulate(args) -> int:
    inputs = []
    if args.preset:
        condition, surface = args.preset.split("-", 1)
        scenario = scenario_preset(surface, condition)
    elif args.scenario:
        path = Path(args.scenario)
        if not path.exists():
            raise ConfigError(f"scenario file not found: {path}")
        inputs.append(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
        scenario = scenario_from_dict(doc)
    else:
        raise ConfigError("simulate needs --scenario FILE or --preset NAME")

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_bits is not None:
        overrides["max_bits"] = args.max_bits
    if args.min_errors is not None:
        overrides["min_errors"] = args.min_errors
    if args.distances is not None:
        start, stop, step = (float(v) for v in args.distances.split(":"))
        overrides["distances_m"] = tuple(np.arange(start, stop + step / 2, step))
    if overrides:
        from dataclasses import replace

        scenario = replace(scenario, **overrides)

    curve = run_ber_vs_distance(scenario, workers=args.workers)

    out_dir = Path(args.out_dir)
    curve_path = out_dir / "ber_curve.csv"
    _write_text(curve_path, curve.to_csv())

    bracketed = True
    try:
        distance = achievable_distance(curve, scenario.target_ber)
    except TargetNotBracketedError:
        bracketed = False
        distance = None
    achievable = {
        "target_ber": scenario.target_ber,
        "achievable_distance_m": distance,
        "bracketed": bracketed,
    }
    achievable_path = out_dir / "achievable.json"
    _write_text(achievable_path, json.dumps(achievable, indent=2, sort_keys=True) + "\n")

    config = _scenario_config_dict(scenario)
    _write_manifest(out_dir, "simulate", inputs, config, [curve_path, achievable_path],
                    seed=scenario.seed)

    if bracketed:
        print(f"achievable distance at BER {scenario.target_ber:g}: {distance:.3f} m")
    else:
        print(f"BER curve never crosses the target {scenario.target_ber:g}; see {curve_path}")
        return EXIT_ANALYSIS
    return EXIT_OK


# --------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    status = EXIT_OK
    if args.store:
        records = _load_store(Path(args.store))
        locations = {}
        for rec in records:
            locations.setdefault(rec.meta.location_key(), []).append(rec)
        print(f"{args.store}: {len(records)} record(s), {len(locations)} location(s)")
        for key in sorted(locations):
            recs = locations[key]
            print(
                f"  {key[0]} d1={_fmt(key[1])} m d2={_fmt(key[2])} m {key[3]}: "
                f"{len(recs)} realization(s), {recs[0].n_points} points"
            )
    if args.manifest:
        path = Path(args.manifest)
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        manifest = json.loads(path.read_text())
        for input_path, digest in manifest.get("inputs", {}).items():
            p = Path(input_path)
            if not p.exists():
                print(f"MISSING {input_path}")
                status = EXIT_INPUT
            elif _sha256(p.read_bytes()) != digest:
                print(f"CHANGED {input_path}")
                status = EXIT_INPUT
            else:
                print(f"ok      {input_path}")
        for output_path in manifest.get("outputs", []):
            exists = Path(output_path).exists()
            print(f"{'ok     ' if exists else 'MISSING'} {output_path}")
            if not exists:
                status = EXIT_INPUT
    if not args.store and not args.manifest:
        raise ConfigError("report needs --store and/or --manifest")
    return status


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vvlc",
        description="NLoS vehicle-reflection VLC measurement processing and link simulation",
    )
    parser.add_argument("--version", action="version", version=f"vvlc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize .s2p/.csv sweeps into the canonical store")
    p.add_argument("inputs", nargs="+", help="files or directories")
    p.add_argument("--format", choices=("auto", "s2p", "csv"), default="auto")
    p.add_argument("--out", "-o", help=f"store path (default: ${DATA_DIR_ENV}/sweeps.csv)")
    p.add_argument("--surface", default="unknown", help="surface label for .s2p inputs")
    p.add_argument("--d1", type=float, default=0.0, help="tx-reflector distance for .s2p inputs")
    p.add_argument("--d2", type=float, default=0.0, help="reflector-rx distance for .s2p inputs")
    p.add_argument("--link", choices=("los", "nlos"), default="nlos")
    p.add_argument("--realization-start", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pathloss", help="band-averaged path loss per distance plus model fit")
    p.add_argument("--store", help="canonical sweep CSV")
    p.add_argument("--surface", required=True)
    p.add_argument("--d0", type=float, default=2.0, help="reference distance in m")
    p.add_argument("--pl-ref", type=float, default=0.0, help="path loss at d0 in dB")
    p.add_argument("--scene", help="Lambertian scene JSON for the benchmark column")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_pathloss)

    p = sub.add_parser("cir", help="impulse responses, FWHM table, optional tail fits")
    p.add_argument("--store", help="canonical sweep CSV")
    p.add_argument("--surface", help="restrict to one surface label")
    p.add_argument("--f-target", type=float, help="target grid top in Hz")
    p.add_argument("--t-res", type=float, default=1e-9,
                   help="wanted resolution in s; sets f_target = f_min + 1/t_res")
    p.add_argument("--window", choices=("none", "hann"), default="none")
    p.add_argument("--fit-wdgf", action="store_true", help="fit the double-gamma tail model")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_cir)

    p = sub.add_parser("simulate", help="Monte Carlo BER versus distance")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--preset", choices=PRESET_NAMES, help="bundled scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--max-bits", type=int, help="override the per-point bit budget")
    p.add_argument("--min-errors", type=int, help="override the per-point error target")
    p.add_argument("--distances", help="override grid as start:stop:step in m")
    p.add_argument("--workers", type=int, default=1, help="parallel distance workers")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize a store and verify manifests")
    p.add_argument("--store")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


def entry_point():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
