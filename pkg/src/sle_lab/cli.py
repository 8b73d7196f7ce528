"""Command-line entry point.

    sle-lab [--out-dir DIR] [--from-manifest FILE] SUBCOMMAND [options]

Every run writes ``manifest.json`` (resolved parameters, seed, versions, wall time, artifacts);
``--from-manifest`` re-runs exactly that configuration.  Exit codes: 0 pass, 1 check failure,
2 configuration error, 3 runtime error.  SLE_LAB_THREADS caps the worker count.
"""

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from importlib import metadata

import numpy as np

from . import drift, experiments, sle, specfun
from .errors import ConfigError, PoleProximity, SleLabError
from .stochastic import RngSeed

SUBCOMMANDS = ("specfun-check", "pde-check", "fk-solve", "sample-trace", "experiment")

DEFAULTS = {
    "specfun-check": {"t_values": [1.0, 2.0, 3.0, 5.0], "im_values": [0.0, 0.4], "n_x": 8,
                      "identity_tol": 1e-9},
    "pde-check": {"kappa": None, "tol": 1e-7},
    "fk-solve": {"kappa": 2.0, "sigma": "reversibility", "s": 0.0, "t": 1.5,
                 "x": [0.3, 0.8, 2.0], "n_paths": 10000},
    "sample-trace": {"kind": "plain", "kappa": 2.0, "p": 1.0, "s": 0.0, "dt": 1e-3,
                     "n_trace": 64, "x0": 0.0, "y0": 0.0, "t_horizon": None},
    "experiment": {"kind": "endpoint", "kappa": 2.0, "s": 0.0, "p": 1.0, "n": 500,
                   "dt": 1e-3, "delta_stop": None, "observable": "MidCircleArg",
                   "n_bins": 16, "n_nodes": 64, "n_trace": 128, "t_eval": None,
                   "refine": True, "control": True},
}
TRACE_KINDS = ("plain", "marked", "disc", "radial", "whole-plane")
EXPERIMENT_KINDS = ("reversibility", "endpoint", "martingale")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else repr(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if hasattr(o, "__dataclass_fields__"):
        return _jsonable({k: getattr(o, k) for k in o.__dataclass_fields__})
    return o


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# ---------------------------------------------------------------------------
# subcommands; each returns (pass, artifacts)
# ---------------------------------------------------------------------------

def _specfun_check(par, seed, out):
    rows = []
    failures = []
    for t in par["t_values"]:
        for y in par["im_values"]:
            for k in range(par["n_x"]):
                z = complex(2 * math.pi * (k + 0.5) / par["n_x"], y)
                for name, fn, which in (("H", specfun.eval_ha, "Theta"),
                                        ("H_I", specfun.eval_ha_I, "Theta_I")):
                    for order in (0, 1, 2):
                        try:
                            v = fn(t, z, order=order).value
                        except PoleProximity:
                            continue
                        bound = ""
                        ok = math.isfinite(abs(v))
                        if order == 0:
                            th = specfun.eval_theta(t, z, which).value
                            d1 = specfun.eval_theta(t, z, which, order=1).value
                            ok = ok and abs(v - 2 * d1 / th) <= par["identity_tol"] * max(
                                1.0, abs(v))
                        if name == "H_I" and t >= abs(y) + order + 2:
                            bound = specfun.estimation_bound(t, z, order)
                            ok = ok and abs(v) <= bound
                        rows.append((t, z.real, z.imag, name, order, v.real, v.imag, bound,
                                     ok))
                        if not ok:
                            failures.append({"t": t, "z": [z.real, z.imag], "kernel": name,
                                             "order": order})
    _write_csv(os.path.join(out, "specfun_check.csv"),
               ["t", "re_z", "im_z", "kernel", "order", "value_re", "value_im", "bound",
                "pass"], rows)
    verdict = {"pass": not failures, "failures": failures, "n_rows": len(rows)}
    _write_json(os.path.join(out, "verdict.json"), verdict)
    return verdict["pass"], ["specfun_check.csv", "verdict.json"]


def _pde_check(par, seed, out):
    kappa = par["kappa"]
    entries = [e for e in drift.CATALOG.values()
               if kappa is None or math.isclose(e.kappa, float(kappa))]
    if not entries:
        raise ConfigError(f"no catalog entries for kappa={kappa}")
    rows = []
    res = {}
    for e in entries:
        r = drift.pde_residual(e)
        rows.append((e.id, e.pde, e.kappa, r.max_residual, r.n_points, r.n_skipped,
                     r.max_residual < par["tol"]))
        res[e.id] = r.max_residual
    ok = all(r[-1] for r in rows)
    _write_csv(os.path.join(out, "pde_check.csv"),
               ["id", "pde", "kappa", "max_residual", "n_points", "n_skipped", "pass"], rows)
    _write_json(os.path.join(out, "verdict.json"),
                {"pass": ok, "kappa": kappa, "tol": par["tol"], "max_residual": res,
                 "failures": [r[0] for r in rows if not r[-1]]})
    return ok, ["pde_check.csv", "verdict.json"]


def _fk_params(par):
    k = float(par["kappa"])
    sig = par["sigma"]
    if sig == "reversibility":
        sig = 4 / k - 1
    elif sig == "decomposition":
        sig = 0.5 + 1 / k
    try:
        return drift.FkParams(k, float(sig), s=float(par["s"]), n_paths=int(par["n_paths"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _fk_solve(par, seed, out):
    params = _fk_params(par)
    ests = drift.lambda_s_grid(params, seed, float(par["t"]), [float(x) for x in par["x"]])
    rows = [(e.t, e.x, e.value, e.stderr, e.psi, e.psi_stderr) for e in ests]
    _write_csv(os.path.join(out, "fk_solve.csv"),
               ["t", "x", "lambda", "stderr", "psi", "psi_stderr"], rows)
    return True, ["fk_solve.csv"]


def _trace_spec(par, seed):
    kind = par["kind"]
    k = float(par["kappa"])
    if kind not in TRACE_KINDS:
        raise ConfigError(f"kind must be one of {TRACE_KINDS}")
    if kind == "plain":
        kk = sle.AnnulusPlain(float(par["p"]), float(par["x0"]))
    elif kind in ("marked", "disc"):
        p = float(par["p"]) if kind == "marked" else 8.0
        lam = experiments.crossing_drift(k, float(par["s"]), p, p / 100, seed.seed)
        kk = (sle.AnnulusMarked(float(par["p"]), lam, float(par["x0"]), float(par["y0"]))
              if kind == "marked" else sle.DiscMarked(lam, float(par["y0"])))
    elif kind == "radial":
        kk = sle.Radial(float(par["s"]))
    else:
        kk = sle.WholePlane(float(par["s"]))
    try:
        return sle.SleSpec(kk, k, float(par["dt"]), seed, t_horizon=par["t_horizon"],
                           n_trace=int(par["n_trace"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _sample_trace(par, seed, out):
    spec = _trace_spec(par, seed)
    smp = sle.sample(spec)
    rows = []
    if smp.trace is not None:
        cov = smp.covering
        for i, (t, z) in enumerate(zip(smp.trace.times, smp.trace.points)):
            extra = (cov[i].real, cov[i].imag) if cov is not None else ("", "")
            rows.append((t, z.real, z.imag) + extra)
    _write_csv(os.path.join(out, "trace.csv"), ["t", "re", "im", "cover_re", "cover_im"],
               rows)
    _write_json(os.path.join(out, "trace.json"),
                {"params": par, "seed": {"seed": seed.seed, "stream_id": seed.stream_id},
                 "aborted": smp.aborted, "n_steps": spec.n_steps,
                 "tip_offset_eps": None if smp.trace is None else smp.trace.tip_offset_eps})
    return True, ["trace.csv", "trace.json"]


def _experiment(par, seed, out):
    kind = par["kind"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"kind must be one of {EXPERIMENT_KINDS}")
    try:
        cfg = experiments.ExperimentConfig(
            kappa=float(par["kappa"]), s=float(par["s"]), p=float(par["p"]),
            n_samples=int(par["n"]), seed=seed.seed, dt=float(par["dt"]),
            delta_stop=par["delta_stop"], observable=par["observable"],
            n_trace=int(par["n_trace"]), n_bins=int(par["n_bins"]),
            n_nodes=int(par["n_nodes"]), t_eval=par["t_eval"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if kind == "reversibility":
        res = experiments.reversibility_experiment(cfg, control=bool(par["control"]))
    elif kind == "endpoint":
        res = experiments.endpoint_decomposition_experiment(cfg, refine=bool(par["refine"]))
    else:
        res = experiments.martingale_unity_experiment(cfg)
    names = sorted(res.raw)
    n = max(len(res.raw[k]) for k in names)
    rows = [[i] + [res.raw[k][i] if i < len(res.raw[k]) else "" for k in names]
            for i in range(n)]
    _write_csv(os.path.join(out, "observables.csv"), ["i"] + names, rows)
    _write_json(os.path.join(out, "verdict.json"),
                {"kind": kind, "config": cfg.to_dict(), "report": res.report,
                 "extra": res.extra, "pass": res.passed})
    return res.passed, ["observables.csv", "verdict.json"]


HANDLERS = {"specfun-check": _specfun_check, "pde-check": _pde_check, "fk-solve": _fk_solve,
            "sample-trace": _sample_trace, "experiment": _experiment}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _maybe_float(s):
    return None if s.lower() == "none" else float(s)


def _sigma(s):
    return s if s in ("reversibility", "decomposition") else float(s)


def _bool(s):
    if s.lower() in ("1", "true", "yes"):
        return True
    if s.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s}")


def build_parser():
    ap = argparse.ArgumentParser(prog="sle-lab", description=__doc__.split("\n")[0])
    ap.add_argument("--out-dir", default=".")
    ap.add_argument("--from-manifest", default=None)
    sub = ap.add_subparsers(dest="subcommand")

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--stream", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON file of parameters")
        return p

    p = common(sub.add_parser("specfun-check"))
    p.add_argument("--t-values", dest="t_values", type=_floats)
    p.add_argument("--im-values", dest="im_values", type=_floats)
    p.add_argument("--n-x", dest="n_x", type=int)

    p = common(sub.add_parser("pde-check"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--tol", type=float)

    p = common(sub.add_parser("fk-solve"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--sigma", type=_sigma)
    p.add_argument("--s", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--x", type=_floats)
    p.add_argument("--n-paths", dest="n_paths", type=int)

    p = common(sub.add_parser("sample-trace"))
    p.add_argument("--kind", choices=TRACE_KINDS)
    for name in ("kappa", "p", "s", "dt", "x0", "y0"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--n-trace", dest="n_trace", type=int)
    p.add_argument("--t-horizon", dest="t_horizon", type=_maybe_float)

    p = common(sub.add_parser("experiment"))
    p.add_argument("--kind", choices=EXPERIMENT_KINDS)
    for name in ("kappa", "p", "s", "dt"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--delta-stop", dest="delta_stop", type=_maybe_float)
    p.add_argument("--t-eval", dest="t_eval", type=_maybe_float)
    p.add_argument("--observable", choices=experiments.OBSERVABLES)
    for name in ("n_bins", "n_nodes", "n_trace"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    p.add_argument("--refine", type=_bool)
    p.add_argument("--control", type=_bool)
    return ap


def resolve(subcommand, cli_values, config_file=None):
    """Defaults, then the config file, then explicit flags.  Unknown keys raise
    ConfigError."""
    if subcommand not in DEFAULTS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    par = dict(DEFAULTS[subcommand])
    if config_file is not None:
        try:
            with open(config_file) as fh:
                extra = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_file}: {exc}") from exc
        if not isinstance(extra, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(extra) - set(par) - {"seed", "stream"})
        if unknown:
            raise ConfigError(f"unknown keys: {unknown}")
        par.update({k: v for k, v in extra.items() if k not in ("seed", "stream")})
    for k, v in cli_values.items():
        if v is not None:
            par[k] = v
    return par


def run(subcommand, params, seed, out_dir):
    """Run one subcommand with resolved parameters; returns the exit code and writes the
    artifacts and manifest into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    code = 0
    error = None
    artifacts = []
    try:
        ok, artifacts = HANDLERS[subcommand](params, seed, out_dir)
        code = 0 if ok else 1
    except ConfigError as exc:
        code, error = 2, str(exc)
    except (SleLabError, ArithmeticError, RuntimeError) as exc:
        code, error = 3, f"{type(exc).__name__}: {exc}"
    manifest = {"subcommand": subcommand, "params": params,
                "seed": {"seed": seed.seed, "stream_id": seed.stream_id},
                "versions": _versions(), "wall_time_s": time.time() - t0,
                "exit_code": code, "error": error, "artifacts": artifacts}
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    if error:
        print(error, file=sys.stderr)
    return code


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.from_manifest:
            try:
                with open(args.from_manifest) as fh:
                    man = json.load(fh)
                sub, params = man["subcommand"], man["params"]
                seed = RngSeed(int(man["seed"]["seed"]), int(man["seed"]["stream_id"]))
            except (OSError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad manifest: {exc}") from exc
            unknown = sorted(set(params) - set(DEFAULTS.get(sub, {})))
            if sub not in DEFAULTS or unknown:
                raise ConfigError(f"bad manifest: subcommand {sub!r}, unknown keys {unknown}")
        else:
            if args.subcommand is None:
                raise ConfigError("no subcommand given\n" + ap.format_usage())
            sub = args.subcommand
            skip = {"subcommand", "out_dir", "from_manifest", "seed", "stream", "config"}
            vals = {k: v for k, v in vars(args).items() if k not in skip}
            params = resolve(sub, vals, args.config)
            file_seed = {}
            if args.config:
                with open(args.config) as fh:
                    file_seed = json.load(fh)
            s = args.seed if args.seed is not None else file_seed.get("seed", 0)
            st = args.stream if args.stream is not None else file_seed.get("stream", 0)
            try:
                seed = RngSeed(int(s), int(st))
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(sub, params, seed, args.out_dir)


if __name__ == "__main__":
    sys.exit(main())
