"""Command-line front end: ``openliouville run`` and ``openliouville verify``."""

import argparse
import json
import os
import sys
import warnings

import numpy as np
import yaml

from . import hs
from .dynamics import (commutator_diagnostic, nz_integrate, oracle_exact, reconstruct,
                       relaxation_report)
from .entropy import entropy, entropy_series, lyapunov_check
from .errors import ConfigError, InvalidInputError, OpenLiouvilleError
from .models import model_from_config, partition_model, unflatten_complex
from .modes import assemble_mode_set, default_grid, dumps_json, markov_freeze
from .projection import (EffectiveLiouville, exact_reduced_resolvent_state,
                         frequency_identity_residual, reduced_resolvent_state)
from .spectral import decompose, track_bands, traceless_check, zero_mode

MODES = ("full", "markov", "nz-only", "oracle-only", "compare-all")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3


# -- configuration -----------------------------------------------------------

def _read_mapping(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", "load_config", field="config") from exc
    try:
        if path.endswith(".json"):
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "load_config", field="config") from exc
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", "load_config", field="config")
    return data


def _positive(key, value, integer=False, minimum=None):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number", "load_config", field=key, value=value)
    if integer and v != value and not isinstance(value, str):
        raise ConfigError(f"{key} must be an integer", "load_config", field=key, value=value)
    if minimum is not None and v < minimum or minimum is None and not v > 0:
        raise ConfigError(f"{key} out of range", "load_config", field=key, value=value)
    return v


def load_config(path, mode=None, seed=None, epsilon=None, out=None):
    """Read and validate a run configuration (YAML or JSON) with CLI overrides."""
    raw = _read_mapping(path)
    base = os.path.dirname(os.path.abspath(path))
    model = raw.get("model")
    if isinstance(model, str):
        model = _read_mapping(os.path.join(base, model))
    if not isinstance(model, dict):
        raise ConfigError("missing model section", "load_config", field="model")
    model = dict(model)
    if seed is not None:
        model["seed"] = seed
    cfg = {"mode": mode or raw.get("mode", "full"),
           "epsilon": raw.get("epsilon", 0.05) if epsilon is None else epsilon,
           "outputs": out or raw.get("outputs", "out")}
    if cfg["mode"] not in MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}", "load_config", field="mode")
    cfg["epsilon"] = _positive("epsilon", cfg["epsilon"])
    zg = raw.get("z_grid") or {}
    tg = raw.get("time_grid") or {}
    cfg["z_grid"] = {"omega_min": zg.get("omega_min"), "omega_max": zg.get("omega_max"),
                     "n_points": _positive("z_grid.n_points", zg.get("n_points", 200),
                                           integer=True, minimum=2)}
    for key in ("omega_min", "omega_max"):
        if cfg["z_grid"][key] is not None:
            try:
                cfg["z_grid"][key] = float(cfg["z_grid"][key])
            except (TypeError, ValueError):
                raise ConfigError(f"z_grid.{key} must be a number", "load_config",
                                  field=f"z_grid.{key}")
    if (cfg["z_grid"]["omega_min"] is None) != (cfg["z_grid"]["omega_max"] is None):
        raise ConfigError("give both omega_min and omega_max or neither", "load_config",
                          field="z_grid")
    if cfg["z_grid"]["omega_min"] is not None and \
            cfg["z_grid"]["omega_min"] >= cfg["z_grid"]["omega_max"]:
        raise ConfigError("omega_min must be below omega_max", "load_config", field="z_grid")
    t_max = tg.get("t_max")
    cfg["time_grid"] = {"t_max": None if t_max is None else _positive("time_grid.t_max",
                                                                      t_max),
                        "n_points": _positive("time_grid.n_points",
                                              tg.get("n_points", 400), integer=True, minimum=2)}
    try:
        cfg["model"] = model_from_config(model)
    except InvalidInputError as exc:
        raise ConfigError(f"invalid model: {exc}", "load_config", field="model",
                          **exc.payload) from exc
    d = cfg["model"].dims.d_sys
    obs = {}
    for name, flat in (raw.get("observables") or {}).items():
        try:
            O = unflatten_complex(flat, d, name)
            obs[name] = hs.check_hermitian(O, name, "load_config")
        except InvalidInputError as exc:
            raise ConfigError(str(exc), "load_config", field=f"observables.{name}") from exc
    cfg["observables"] = obs
    return cfg


# -- pipeline ----------------------------------------------------------------

def _z_grid(cfg, ev):
    zg = cfg["z_grid"]
    if zg["omega_min"] is None:
        return default_grid(ev, zg["n_points"])
    return np.linspace(zg["omega_min"], zg["omega_max"], zg["n_points"]) + 1j * ev.zero_point().imag


def _time_grid(cfg, tau):
    tg = cfg["time_grid"]
    t_max = tg["t_max"]
    if t_max is None:
        t_max = 5 * tau if np.isfinite(tau) else 20.0
    return np.linspace(0.0, t_max, tg["n_points"])


def _identity_checks(ev, rho0):
    """Frequency identity residuals at a fixed set of complex frequencies."""
    zs = [complex(w, y) for w in (-1.0, -0.3, 0.2, 0.9) for y in (0.1, 0.5)]
    res = [frequency_identity_residual(ev, rho0, z) for z in zs]
    one = hs.vec(np.eye(int(round(np.sqrt(ev.dim)))))
    left = max(float(np.linalg.norm(one.conj() @ ev.evaluate(z))) for z in zs)
    trace = max(abs(np.trace(reduced_resolvent_state(ev, rho0, z))
                    - 1j / (z + 1j * ev.smoothing)) for z in zs)
    return {"frequency_identity_residual": max(res), "left_zero_residual": left,
            "trace_law_residual": float(trace), "z_points": [[z.real, z.imag] for z in zs]}


def _nz_on_grid(part, rho0, times, h_max_rel=1e-2, max_steps=10_000):
    """NZ integration on a refinement of ``times`` (step at most ``h_max_rel / scale``).

    The memory sum costs O(steps^2), so at most ``max_steps`` fine steps are
    taken; the returned trajectory then stops at the reachable output time.
    """
    dt = times[1] - times[0]
    sub = max(1, int(np.ceil(dt * part.spectral_scale / h_max_rel)))
    n_out = min(times.size, max_steps // sub + 1)
    if n_out < 2:
        sub = max_steps
        n_out = 2
    fine = np.arange((n_out - 1) * sub + 1) * (dt / sub)
    traj = nz_integrate(part, rho0, fine)
    traj.times = times[:n_out]
    traj.states = traj.states[::sub]
    traj.positivity_log = traj.positivity_log[::sub]
    return traj


def _positivity_summary(traj):
    lo = traj.positivity_log
    return {"min_eigenvalue": float(lo.min()), "negative_samples": int(np.sum(lo < -1e-6)),
            "samples": int(lo.size)}


def _lyapunov(series, ms, times):
    if not np.isfinite(ms.tau) or times[-1] <= ms.tau:
        return {"verdict": "NOT-APPLICABLE", "reason": "trajectory shorter than tau"}
    return lyapunov_check(series, ms, (ms.tau, times[-1]))


def _tau_table(traj, ms):
    try:
        return relaxation_report(traj, ms)
    except OpenLiouvilleError as exc:
        return {"error": exc.to_dict()}


def run(cfg):
    """Execute the configured pipeline and write the output files."""
    spec = cfg["model"]
    out = cfg["outputs"]
    os.makedirs(out, exist_ok=True)
    mode = cfg["mode"]
    report = {"mode": mode, "seed": int(spec.seed), "family": spec.family,
              "epsilon": cfg["epsilon"], "model": spec.to_config(matrices=False)}
    part = partition_model(spec)
    ev = EffectiveLiouville(part, smoothing=cfg["epsilon"])
    rho0 = spec.rho0
    trajs = {}
    ms = None
    if mode in ("full", "compare-all"):
        grid = _z_grid(cfg, ev)
        ms = assemble_mode_set(ev, rho0, grid=grid)
        ms.meta["band_track"].to_csv(os.path.join(out, "spectrum.csv"))
        ms.dump(os.path.join(out, "modes.json"))
        report["identity_checks"] = _identity_checks(ev, rho0)
        times = _time_grid(cfg, ms.tau)
        trajs["modes"] = reconstruct(ms, times)
    if mode in ("markov", "compare-all"):
        _, mk = markov_freeze(ev, rho0)
        if ms is None:
            ms = mk
            mk.dump(os.path.join(out, "modes.json"))
            band = track_bands(ev, _z_grid(cfg, ev))
            band.to_csv(os.path.join(out, "spectrum.csv"))
            report["identity_checks"] = _identity_checks(ev, rho0)
        times = _time_grid(cfg, ms.tau)
        trajs["markov"] = reconstruct(mk, times)
        report["markov_tau"] = None if not np.isfinite(mk.tau) else float(mk.tau)
    if mode in ("nz-only", "oracle-only"):
        times = _time_grid(cfg, np.inf)
    if mode in ("nz-only", "compare-all"):
        trajs["nz"] = _nz_on_grid(part, rho0, times)
        report["nz_horizon"] = float(trajs["nz"].times[-1])
    if mode in ("oracle-only", "compare-all"):
        trajs["oracle"], total = oracle_exact(spec.H_tot, rho0, spec.rho_env, times,
                                              return_total=True)
        s_tot = [entropy(r) for r in total]
        report["total_entropy_drift"] = float(np.max(np.abs(np.array(s_tot) - s_tot[0])))
    primary = {"full": "modes", "markov": "markov", "nz-only": "nz",
               "oracle-only": "oracle", "compare-all": "modes"}[mode]
    traj = trajs[primary]
    traj.to_csv(os.path.join(out, "trajectory.csv"))
    rho_ref = ms.rho_inf if ms is not None else traj.states[-1]
    series = entropy_series(traj, rho_ref)
    series.to_csv(os.path.join(out, "entropy.csv"))
    report["positivity"] = _positivity_summary(traj)
    report["entropy"] = {"S_inf": series.S_inf, "S_final": float(series.S[-1])}
    if ms is not None:
        report["tau"] = None if not np.isfinite(ms.tau) else float(ms.tau)
        report["tau_table"] = _tau_table(traj, ms) if np.isfinite(ms.tau) else None
        report["lyapunov"] = _lyapunov(series, ms, traj.times)
        for name, O in cfg["observables"].items():
            report.setdefault("commutator_diagnostics", {})[name] = \
                commutator_diagnostic(O, ms.rho_inf)
    if mode == "compare-all":
        ref = trajs["oracle"].states
        report["max_deviation_from_oracle"] = {
            k: float(np.linalg.norm(v.states - ref[:len(v.states)], axis=(1, 2)).max())
            for k, v in trajs.items() if k != "oracle"}
        for k, v in trajs.items():
            if k != primary:
                v.to_csv(os.path.join(out, f"trajectory_{k}.csv"))
        report["epsilon_sensitivity"] = _sensitivity(part, rho0, cfg)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(dumps_json(report))
    return report


def _sensitivity(part, rho0, cfg):
    """Decay rates at half and double the configured smoothing."""
    rows = []
    for f in (0.5, 1.0, 2.0):
        eps = f * cfg["epsilon"]
        ev = EffectiveLiouville(part, smoothing=eps)
        try:
            ms = assemble_mode_set(ev, rho0)
            rows.append({"epsilon": eps, "gammas": sorted(float(g) for g in ms.gammas),
                         "tau": None if not np.isfinite(ms.tau) else float(ms.tau)})
        except OpenLiouvilleError as exc:
            rows.append({"epsilon": eps, "error": exc.to_dict()})
    return rows


# -- verify ------------------------------------------------------------------

def _check(name, value, tol, status=None):
    if status is None:
        status = "PASS" if value <= tol else "FAIL"
    return {"invariant": name, "status": status, "residual": float(value),
            "tolerance": None if tol is None else float(tol)}


def verify(cfg):
    """Run the invariant suite on the configured model; returns a list of rows."""
    spec = cfg["model"]
    rows = []
    H = spec.H_tot
    rows.append(_check("H_tot hermitian", hs.hs_norm(H - H.conj().T), 1e-12 * hs.hs_norm(H)))
    rows.append(_check("rho_env stationary",
                       hs.hs_norm(spec.H_E @ spec.rho_env - spec.rho_env @ spec.H_E), 1e-12))
    part = partition_model(spec)
    scale = part.spectral_scale
    d = part.projectors.defects()
    rows.append(_check("projector identities", max(d.values()), 1e-12))
    rows.append(_check("block reassembly", hs.hs_norm(part.reassemble() - part.L_tot),
                       1e-10 * scale))
    ev = EffectiveLiouville(part, smoothing=cfg["epsilon"])
    ident = _identity_checks(ev, spec.rho0)
    rows.append(_check("frequency identity", ident["frequency_identity_residual"], 1e-9))
    rows.append(_check("left zero eigenvector", ident["left_zero_residual"], 1e-10 * scale))
    rows.append(_check("trace law i/z", ident["trace_law_residual"], 1e-10))
    z, h = complex(0.3, 0.4), 1e-5
    fd = (ev.evaluate(z + h) - ev.evaluate(z - h)) / (2 * h)
    dL = ev.derivative(z)
    rows.append(_check("derivative vs finite difference",
                       hs.hs_norm(dL - fd) / max(hs.hs_norm(dL), 1e-300), 1e-5))
    dec = decompose(ev.evaluate(z), z, warn=False)
    bi = hs.hs_norm(dec.left_matrix().conj().T @ dec.right_matrix() - np.eye(dec.n))
    rows.append(_check("bi-orthonormality", bi, 1e-8))
    rows.append(_check("super-unity", hs.hs_norm(dec.super_unity() - np.eye(dec.n)), 1e-8))
    tl = traceless_check(dec)
    rows.append(_check("traceless non-zero modes", tl["max_ratio"], 1e-9))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        zm = zero_mode(decompose(ev.evaluate(ev.zero_point()), warn=False), warn=False)
    rows.append(_check("zero-mode uniqueness", float(zm.multiplicity - 1), None,
                       "PASS" if zm.unique else "NOT-UNIQUE"))
    ms = assemble_mode_set(ev, spec.rho0, grid=_z_grid(cfg, ev))
    rows.append(_check("lower half-plane", max([m.z.imag for m in ms.modes], default=0.0), 1e-9))
    paired = {k for p in ms.pairing for k in p}
    lonely = [abs(m.omega) for m in ms.modes if m.k not in paired]
    rows.append(_check("pairing closure", max(lonely, default=0.0), 1e-6 * scale))
    _, mk = markov_freeze(ev, spec.rho0)
    r0 = reconstruct(mk, [0.0]).states[0]
    rows.append(_check("markov completeness", hs.hs_norm(r0 - spec.rho0), 1e-9))
    w = complex(0.2, 0.3)
    rz = exact_reduced_resolvent_state(part, spec.rho0, w)
    rows.append(_check("exact trace law", abs(np.trace(rz) - 1j / w), 1e-10))
    return rows


# -- entry point -------------------------------------------------------------

def _error(exc, code):
    payload = exc.to_dict() if isinstance(exc, OpenLiouvilleError) else \
        {"error": type(exc).__name__, "message": str(exc)}
    payload["exit_code"] = code
    sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="openliouville",
                                description="Effective Liouville analysis of open quantum systems")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML or JSON configuration file")
        s.add_argument("--mode", choices=MODES, help="override the configured mode")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="override the model seed")
        s.add_argument("--epsilon", type=float, help="override the smoothing width")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means a numerical failure
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.mode, args.seed, args.epsilon, args.out)
    except ConfigError as exc:
        return _error(exc, EXIT_CONFIG)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if args.command == "run":
                run(cfg)
                return EXIT_OK
            rows = verify(cfg)
    except OpenLiouvilleError as exc:
        return _error(exc, EXIT_NUMERICAL)
    except (np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        return _error(exc, EXIT_NUMERICAL)
    text = dumps_json({"invariants": rows})
    sys.stdout.write(text)
    os.makedirs(cfg["outputs"], exist_ok=True)
    with open(os.path.join(cfg["outputs"], "verify.json"), "w") as fh:
        fh.write(text)
    return EXIT_VERIFY if any(r["status"] == "FAIL" for r in rows) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
