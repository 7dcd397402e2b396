"""Configuration-driven experiment runner.

``dopinv run config.json [--out DIR] [--seed S]`` executes one of four
pipelines (forward, invert, equilibrium, lbic1d) and persists everything
a rerun needs: a manifest with the fully resolved configuration and
library versions, numeric CSVs, a numbers-only summary.json, and figures
rendered next to the data files.  Identical configs and seeds give
byte-identical numeric outputs; wall time lives only in the manifest.

``dopinv compare dirA dirB`` loads two finished runs on the same mesh
and phantom and reports the difference of the reconstructions plus
per-run errors against the shared truth, broken down by lateral halves
(near/far relative to each run's sources).

Exit codes: 0 success, 2 configuration error (message names the field),
1 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, device, fem, forward, inversion, lbic1d, phantoms, report
from .device import NewtonError
from .fem import SolverError
from .mesh import GeometryConfig, build_unit_square


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"field '{field}': {message}")
        self.field = field


# ---------------------------------------------------------------------------
# small deterministic writers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return str(path)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


# ---------------------------------------------------------------------------
# config handling


_COMMON_DEFAULTS = {
    "geometry": None,
    "seed": 0,
    "output_dir": "runs/out",
}

_MODE_DEFAULTS = {
    "forward": {"n": 44, "phantom": "ridge",
                "profiles": {"count": 9}},
    "invert": {"fine_n": 88, "coarse_n": 44, "phantom": "ridge",
               "profiles": {"count": 9}, "noise_level": 0.0,
               "reconstruction": {}},
    "equilibrium": {"n": 32, "doping": "pn_vertical", "polarity": "bipolar",
                    "lambda2": 1.0},
    "lbic1d": {"m": 256, "potential": "cosine",
               "params": {"mu_n": 1.0, "mu_p": 1.0, "q0": 1.0},
               "family_offsets": [-0.5, -1.0]},
}

_RECON_DEFAULTS = {
    "step_scale": 0.9, "max_cycles": 500, "tau": 1.5, "margin": 0.1,
    "gamma_floor": 1e-3, "smoothing_alpha": 0.0, "initial_gamma": 1.0,
    "power_iters": 10, "zero_residual_tol": 1e-10,
}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    mode = raw.get("mode")
    if mode not in _MODE_DEFAULTS:
        raise ConfigError("mode", f"must be one of {sorted(_MODE_DEFAULTS)}, "
                                  f"got {mode!r}")
    cfg = dict(_COMMON_DEFAULTS)
    cfg.update(_MODE_DEFAULTS[mode])
    known = set(cfg) | {"mode"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown configuration field")
    cfg.update(raw)
    cfg["mode"] = mode
    if mode == "invert":
        recon = dict(_RECON_DEFAULTS)
        extra = cfg.get("reconstruction") or {}
        if not isinstance(extra, dict):
            raise ConfigError("reconstruction", "must be an object")
        for key in extra:
            if key not in recon:
                raise ConfigError(f"reconstruction.{key}",
                                  "unknown reconstruction field")
        recon.update(extra)
        cfg["reconstruction"] = recon
    _validate(cfg)
    return cfg


def _require_positive_int(cfg, field, minimum=1):
    value = cfg.get(field)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(field, f"must be an integer >= {minimum}, got {value!r}")


def _validate(cfg):
    mode = cfg["mode"]
    if cfg["geometry"] is not None and not isinstance(cfg["geometry"], dict):
        raise ConfigError("geometry", "must be an object with gamma1/"
                                      "dirichlet_other intervals")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed", f"must be an integer, got {cfg['seed']!r}")
    if mode == "forward":
        _require_positive_int(cfg, "n", 2)
        _check_phantom(cfg)
        _check_profiles(cfg)
    elif mode == "invert":
        _require_positive_int(cfg, "fine_n", 2)
        _require_positive_int(cfg, "coarse_n", 2)
        if cfg["fine_n"] <= cfg["coarse_n"]:
            raise ConfigError("fine_n", "must exceed coarse_n "
                                        "(two-mesh data generation)")
        _check_phantom(cfg)
        _check_profiles(cfg)
        noise = cfg["noise_level"]
        if not isinstance(noise, (int, float)) or noise < 0:
            raise ConfigError("noise_level", f"must be >= 0, got {noise!r}")
        ig = cfg["reconstruction"]["initial_gamma"]
        if not (ig == "strip_truth" or isinstance(ig, (int, float))):
            raise ConfigError("reconstruction.initial_gamma",
                              "must be a number or 'strip_truth'")
    elif mode == "equilibrium":
        _require_positive_int(cfg, "n", 2)
        if cfg["doping"] not in phantoms.DOPING_PHANTOMS:
            raise ConfigError("doping", f"unknown profile {cfg['doping']!r}; "
                              f"choose from {sorted(phantoms.DOPING_PHANTOMS)}")
        if cfg["polarity"] not in ("bipolar", "unipolar"):
            raise ConfigError("polarity", "must be 'bipolar' or 'unipolar'")
        if not isinstance(cfg["lambda2"], (int, float)) or cfg["lambda2"] <= 0:
            raise ConfigError("lambda2", "must be a positive number")
    elif mode == "lbic1d":
        _require_positive_int(cfg, "m", 4)
        if cfg["potential"] not in phantoms.POTENTIALS_1D:
            raise ConfigError("potential", f"unknown potential "
                              f"{cfg['potential']!r}; choose from "
                              f"{sorted(phantoms.POTENTIALS_1D)}")
        p = cfg["params"]
        if not isinstance(p, dict):
            raise ConfigError("params", "must be an object")
        for key in p:
            if key not in ("mu_n", "mu_p", "q0"):
                raise ConfigError(f"params.{key}", "unknown parameter")
        offs = cfg["family_offsets"]
        if not isinstance(offs, list) or not all(
                isinstance(v, (int, float)) and v < 0 for v in offs):
            raise ConfigError("family_offsets",
                              "must be a list of negative numbers")


def _check_phantom(cfg):
    if cfg["phantom"] not in phantoms.GAMMA_PHANTOMS:
        raise ConfigError("phantom", f"unknown phantom {cfg['phantom']!r}; "
                          f"choose from {sorted(phantoms.GAMMA_PHANTOMS)}")


def _check_profiles(cfg):
    profiles_cfg = cfg["profiles"]
    if not isinstance(profiles_cfg, dict):
        raise ConfigError("profiles", "must be an object")
    if "centers" in profiles_cfg:
        centers = profiles_cfg["centers"]
        if not isinstance(centers, list) or not centers or not all(
                isinstance(c, (int, float)) and 0 < c < 1 for c in centers):
            raise ConfigError("profiles.centers",
                              "must be a nonempty list of values in (0, 1)")
        hw = profiles_cfg.get("half_width", 0.125)
        if not isinstance(hw, (int, float)) or hw <= 0:
            raise ConfigError("profiles.half_width", "must be positive")
    elif "count" in profiles_cfg:
        count = profiles_cfg["count"]
        if not isinstance(count, int) or isinstance(count, bool) or count < 1:
            raise ConfigError("profiles.count", "must be a positive integer")
    else:
        raise ConfigError("profiles", "needs either 'count' or 'centers'")
    amp = profiles_cfg.get("amplitude", 1.0)
    if not isinstance(amp, (int, float)):
        raise ConfigError("profiles.amplitude", "must be a number")


def _geometry(cfg) -> GeometryConfig | None:
    geo = cfg.get("geometry")
    if geo is None:
        return None
    try:
        gamma1 = tuple(geo.get("gamma1", (0.0, 0.5)))
        other = tuple(tuple(seg) for seg in geo.get(
            "dirichlet_other", (("bottom", 0.0, 1.0),)))
        return GeometryConfig(gamma1=gamma1, dirichlet_other=other)
    except (TypeError, ValueError) as exc:
        raise ConfigError("geometry", str(exc))


def _profiles(cfg) -> list[forward.InputProfile]:
    profiles_cfg = cfg["profiles"]
    amp = float(profiles_cfg.get("amplitude", 1.0))
    if "centers" in profiles_cfg:
        hw = float(profiles_cfg.get("half_width", 0.125))
        return [forward.InputProfile(center=float(c), half_width=hw,
                                     amplitude=amp)
                for c in profiles_cfg["centers"]]
    count = profiles_cfg["count"]
    hw = profiles_cfg.get("half_width")
    if hw is None:
        return forward.equally_spaced_profiles(count, amplitude=amp)
    return forward.equally_spaced_profiles(count, half_width=float(hw),
                                           amplitude=amp)


# ---------------------------------------------------------------------------
# pipelines


def _run_forward(cfg, outdir: Path) -> dict:
    config = _geometry(cfg)
    mesh = build_unit_square(cfg["n"], config or GeometryConfig())
    gamma_fn = phantoms.gamma_phantom(cfg["phantom"])
    gamma = np.asarray(gamma_fn(mesh.nodes[:, 0], mesh.nodes[:, 1]),
                       dtype=float)
    profiles = _profiles(cfg)
    traces = []
    for profile in profiles:
        _, trace = forward.unipolar_forward(mesh, gamma, profile)
        traces.append(trace)
    data = forward.MeasurementSet(mesh=mesh, profiles=profiles, traces=traces,
                                  noise_level=0.0, noise_norm=0.0,
                                  clean_norm=float(np.sqrt(sum(
                                      t.norm() ** 2 for t in traces))),
                                  seed=cfg["seed"], source_n=cfg["n"])
    mesh.export_csv(outdir)
    data.save(outdir)
    write_csv(outdir / "gamma_final.csv",
              ["node", "x", "y", "gamma"],
              [(i, mesh.nodes[i, 0], mesh.nodes[i, 1], gamma[i])
               for i in range(mesh.num_nodes)])
    figures = [
        report.field_figure(mesh, gamma, outdir / "conductivity.png",
                            title="conductivity"),
        report.traces_figure(traces, outdir / "traces.png"),
    ]
    summary = {
        "mode": "forward",
        "num_profiles": len(profiles),
        "trace_norms": [t.norm() for t in traces],
        "stacked_norm": data.clean_norm,
        "gamma_min": float(gamma.min()),
        "gamma_max": float(gamma.max()),
    }
    return {"summary": summary, "figures": figures}


def _run_invert(cfg, outdir: Path) -> dict:
    config = _geometry(cfg)
    gamma_fn = phantoms.gamma_phantom(cfg["phantom"])
    profiles = _profiles(cfg)
    data = forward.synthesize_dataset(
        gamma_fn, profiles, cfg["fine_n"], cfg["coarse_n"],
        noise_level=float(cfg["noise_level"]), seed=cfg["seed"],
        config=config)
    mesh = data.mesh
    truth = np.asarray(gamma_fn(mesh.nodes[:, 0], mesh.nodes[:, 1]),
                       dtype=float)
    rc = dict(cfg["reconstruction"])
    if rc["initial_gamma"] == "strip_truth":
        rc["initial_gamma"] = phantoms.strip_initial_guess(
            mesh, gamma_fn, margin=rc["margin"])
    rc["seed"] = cfg["seed"]
    recon_cfg = inversion.ReconstructionConfig(**rc)
    result = inversion.run_reconstruction(data, recon_cfg, gamma_true=truth)

    mesh.export_csv(outdir)
    data.save(outdir)
    write_csv(outdir / "history.csv",
              ["k", "cycle", "j", "residual_j", "total_residual",
               "error_vs_truth"],
              [(row["k"], row["cycle"], row["j"], row["residual_j"],
                row["total_residual"], row["error_vs_truth"])
               for row in result.history])
    write_csv(outdir / "gamma_final.csv",
              ["node", "x", "y", "gamma", "gamma_true"],
              [(i, mesh.nodes[i, 0], mesh.nodes[i, 1], result.gamma[i],
                truth[i]) for i in range(mesh.num_nodes)])
    mask = mesh.interior_mask(recon_cfg.margin)
    initial = recon_cfg.initial_gamma if isinstance(recon_cfg.initial_gamma,
                                                    np.ndarray) \
        else np.full(mesh.num_nodes, float(recon_cfg.initial_gamma))
    summary = {
        "mode": "invert",
        "cycles_run": result.cycles_run,
        "stopped_by": result.stopped_by,
        "final_residual": result.final_residual,
        "noise_norm": data.noise_norm,
        "clean_norm": data.clean_norm,
        "step_norms": result.step_norms,
        "initial_error": inversion.masked_relative_error(
            mesh, initial, truth, mask),
        "final_error": result.cycle_errors[-1] if result.cycle_errors else None,
        "gamma_min": float(result.gamma.min()),
        "gamma_max": float(result.gamma.max()),
    }
    figures = [
        report.comparison_figure(mesh, result.gamma, truth,
                                 outdir / "reconstruction.png"),
        report.history_figure(result.cycle_residuals,
                              outdir / "history.png",
                              cycle_errors=result.cycle_errors,
                              threshold=recon_cfg.tau * data.noise_norm),
        report.traces_figure(data.traces, outdir / "traces.png"),
    ]
    return {"summary": summary, "figures": figures}


def _run_equilibrium(cfg, outdir: Path) -> dict:
    config = _geometry(cfg)
    mesh = build_unit_square(cfg["n"], config or GeometryConfig())
    doping_fn = phantoms.doping_phantom(cfg["doping"])
    doping = np.asarray(doping_fn(mesh.nodes[:, 0], mesh.nodes[:, 1]),
                        dtype=float)
    potential, residual_history = device.solve_equilibrium(
        mesh, doping, float(cfg["lambda2"]), polarity=cfg["polarity"],
        return_history=True)
    mesh.export_csv(outdir)
    write_csv(outdir / "equilibrium.csv",
              ["node", "x", "y", "doping", "potential"],
              [(i, mesh.nodes[i, 0], mesh.nodes[i, 1], doping[i],
                potential[i]) for i in range(mesh.num_nodes)])
    figures = [
        report.field_figure(mesh, doping, outdir / "doping.png",
                            title="doping", cmap="RdBu_r"),
        report.field_figure(mesh, potential, outdir / "potential.png",
                            title="equilibrium potential"),
    ]
    summary = {
        "mode": "equilibrium",
        "newton_iterations": len(residual_history) - 1,
        "newton_residuals": [float(r) for r in residual_history],
        "potential_min": float(potential.min()),
        "potential_max": float(potential.max()),
    }
    return {"summary": summary, "figures": figures}


def _run_lbic1d(cfg, outdir: Path) -> dict:
    params = lbic1d.Lbic1dParameters(**{k: float(v)
                                        for k, v in cfg["params"].items()})
    pot_fn = phantoms.potential_1d(cfg["potential"])
    curve = lbic1d.forward_currents(pot_fn, cfg["m"], params)
    v_true = np.asarray(pot_fn(curve.x), dtype=float)
    v0 = float(v_true[0])
    fit = lbic1d.fit_constants(curve, v0, params)
    v_rec = lbic1d.reconstruct_potential(curve, v0, params, fit)
    rep = lbic1d.attainability_report(curve, v0, params)
    members = [lbic1d.family_member(curve, params, fit.c1 + off)
               for off in cfg["family_offsets"]]

    rows = [(curve.x[i], curve.i[i], v_true[i], v_rec[i])
            for i in range(len(curve.x))]
    write_csv(outdir / "curve.csv",
              ["x", "current", "potential_true", "potential_rec"], rows)
    if members:
        header = ["x"] + [f"potential_c1_{m.c1!r}" for m in members]
        write_csv(outdir / "family.csv", header,
                  [(curve.x[i], *(m.potential[i] for m in members))
                   for i in range(len(curve.x))])
    figures = [report.lbic_figure(curve.x, curve.i, outdir / "lbic.png",
                                  potential_true=v_true, potential_rec=v_rec)]
    summary = {
        "mode": "lbic1d",
        "c1": fit.c1, "c2": fit.c2,
        "fit_residual": fit.residual_norm,
        "fit_iterations": fit.iterations,
        "attainable": rep.attainable,
        "max_potential_error": float(np.abs(v_rec - v_true).max()),
        "family_c2": [m.c2 for m in members],
    }
    return {"summary": summary, "figures": figures}


_PIPELINES = {
    "forward": _run_forward,
    "invert": _run_invert,
    "equilibrium": _run_equilibrium,
    "lbic1d": _run_lbic1d,
}


def run(config_path, out_override=None, seed_override=None) -> int:
    cfg = load_config(config_path)
    if seed_override is not None:
        cfg["seed"] = seed_override
    outdir = Path(out_override or cfg["output_dir"])
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output_dir", f"cannot create {outdir}: {exc}")
    started = time.perf_counter()
    result = _PIPELINES[cfg["mode"]](cfg, outdir)
    wall = time.perf_counter() - started
    write_json(outdir / "summary.json", result["summary"])
    manifest = {
        "config": cfg,
        "versions": {
            "dopinv": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "matplotlib": __import__("matplotlib").__version__,
            "python": sys.version.split()[0],
        },
        "seed": cfg["seed"],
        "wall_time_s": wall,
        "figures": [str(Path(f).name) for f in result["figures"]],
    }
    write_json(outdir / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# compare


def _load_run(path: Path):
    manifest_path = path / "manifest.json"
    gamma_path = path / "gamma_final.csv"
    if not manifest_path.exists() or not gamma_path.exists():
        raise ConfigError("compare", f"{path} is not a finished run "
                                     "(missing manifest.json or gamma_final.csv)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    table = np.genfromtxt(gamma_path, delimiter=",", names=True)
    return manifest, table


def _source_centers(manifest) -> list[float]:
    profiles_cfg = manifest["config"].get("profiles", {})
    if "centers" in profiles_cfg:
        return [float(c) for c in profiles_cfg["centers"]]
    count = profiles_cfg.get("count", 0)
    return [j / (count + 1) for j in range(1, count + 1)]


def compare(dir_a, dir_b, out_path=None) -> int:
    man_a, tab_a = _load_run(Path(dir_a))
    man_b, tab_b = _load_run(Path(dir_b))
    if tab_a.shape != tab_b.shape or \
            not np.array_equal(tab_a["x"], tab_b["x"]) or \
            not np.array_equal(tab_a["y"], tab_b["y"]):
        raise ConfigError("compare", "runs use different meshes")
    if man_a["config"].get("phantom") != man_b["config"].get("phantom"):
        raise ConfigError("compare", "runs use different phantoms")

    n_side = int(round(np.sqrt(len(tab_a)))) - 1
    mesh = build_unit_square(n_side)
    margin = man_a["config"].get("reconstruction", {}).get("margin", 0.1)
    mask = mesh.interior_mask(margin)
    x = tab_a["x"]

    def masked_err(tab):
        if "gamma_true" not in (tab.dtype.names or ()):
            return None, None, None
        diff = tab["gamma"] - tab["gamma_true"]
        denom = fem.masked_l2(mesh, tab["gamma_true"], mask)
        total = fem.masked_l2(mesh, diff, mask) / denom
        left = fem.masked_l2(mesh, diff, mask & (x < 0.5)) / \
            fem.masked_l2(mesh, tab["gamma_true"], mask & (x < 0.5))
        right = fem.masked_l2(mesh, diff, mask & (x > 0.5)) / \
            fem.masked_l2(mesh, tab["gamma_true"], mask & (x > 0.5))
        return total, left, right

    diff_ab = tab_a["gamma"] - tab_b["gamma"]
    rep = {
        "nodes": len(tab_a),
        "difference_l2": fem.masked_l2(mesh, diff_ab, mask),
        "difference_max": float(np.abs(diff_ab).max()),
        "identical": bool(np.array_equal(tab_a["gamma"], tab_b["gamma"])),
    }
    for label, tab, man in (("run_a", tab_a, man_a), ("run_b", tab_b, man_b)):
        total, left, right = masked_err(tab)
        entry = {"dir": str(dir_a if label == "run_a" else dir_b)}
        if total is not None:
            centers = _source_centers(man)
            near = "left" if centers and np.mean(centers) < 0.5 else "right"
            entry.update({
                "error_total": total,
                "error_left_half": left,
                "error_right_half": right,
                "near_half": near,
                "error_near": left if near == "left" else right,
                "error_far": right if near == "left" else left,
            })
        rep[label] = entry
    text = json.dumps(rep, indent=2, sort_keys=True)
    print(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dopinv",
        description="semiconductor doping inversion experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("config", help="path to a JSON configuration")
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--seed", type=int, help="seed override")
    p_cmp = sub.add_parser("compare", help="compare two finished runs")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--out", help="also write the report to this file")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run(args.config, out_override=args.out,
                       seed_override=args.seed)
        return compare(args.dir_a, args.dir_b, out_path=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, NewtonError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
