"""Command-line frontend chaining the full workflow.

Subcommands::

    generate   benchmark train/test datasets (CSV + JSON sidecar)
    fit-lti    LTI prior fit on a train set -> model JSON + BFR report
    fit        full LPV fit seeded by the LTI model -> model JSON + report
    laplace    posterior covariance at the fitted model -> posterior JSON
    predict    predictive mean/bands along a dataset -> trajectory CSV
    eval       BFR + band coverage of a trajectory vs a dataset

Normalization is owned by the frontend: fit-lti standardizes the train
data and stores the record inside the model file; every later stage
re-applies that record and converts results back to physical units.
Each command writes a ``<command>.manifest.json`` documenting inputs,
outputs, config digest, seed and stage timings (manifests are the only
outputs that vary between reruns — everything else is byte-stable for
a fixed seed and config).

Exit codes: 0 success, 2 input/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import _jsonio, __version__
from .benchmark import BenchmarkConfig, generate_benchmark_datasets
from .data import NormRecord, apply_record, bfr, normalize, read_dataset, write_dataset
from .estimate import (FitConfig, ModelDims, build_prior, dims_from_model,
                       fit_lti_prior, multi_start_fit)
from .exceptions import (DataFormatError, DimensionMismatchError, DivergenceError,
                         FitDivergedError, NonFiniteActivationError, SingularUpdateError)
from .model import load_model, pack_params, save_model, simulate
from .uq import (PredictiveTrajectory, laplace_fit, load_posterior,
                 predictive_trajectory, read_trajectory_csv, save_posterior,
                 write_trajectory_csv)


class CliError(ValueError):
    """Bad configuration or unusable input (exit code 2)."""


DEFAULT_CONFIG = {
    "seed": 0,
    "benchmark": {
        "snr_db": 35.0,
        "ts": 0.05,
        "n_train": 3461,
        "n_test": 600,
    },
    "lti": {
        "n_x_hat": 6,
        "restarts": 8,
        "adam_iterations": 2000,
        "adam_learning_rate": 0.01,
        "lbfgs_max_iterations": 2000,
        "lbfgs_memory": 10,
        "lbfgs_grad_tol": 1e-8,
        "lbfgs_ftol": 1e-9,
        "m0_init_scale": 0.3,
        "m0_spectral_radius": 0.7,
        "divergence_penalty": 1e12,
        "divergence_bound": 1e9,
    },
    "lpv": {
        "n_x_hat": 6,
        "n_p": 1,
        "hidden": [3, 3],
        "restarts": 16,
        "adam_iterations": 2000,
        "adam_learning_rate": 3e-4,
        "lbfgs_max_iterations": 6000,
        "lbfgs_memory": 170,
        "lbfgs_grad_tol": 1e-8,
        "lbfgs_ftol": 1e-9,
        "m_init_std": 0.01,
        "sigma_e_scale": 0.01,
        "m0_var": 0.25,
        "default_var": 10.0,
        "divergence_penalty": 1e12,
        "divergence_bound": 1e9,
    },
    "predict": {
        "n_sigma": 2.0,
    },
}


def _merge(base, user, crumbs):
    if not isinstance(user, dict):
        raise CliError(f"config section {'.'.join(crumbs) or '<root>'} must be an object")
    for key, val in user.items():
        path = ".".join(crumbs + [key])
        if key not in base:
            raise CliError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            _merge(base[key], val, crumbs + [key])
        else:
            base[key] = val


def _require_number(cfg, section, key, minimum=None, allow_inf=False):
    val = cfg[section][key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CliError(f"config {section}.{key} must be a number")
    val = float(val)
    if val != val:  # NaN
        raise CliError(f"config {section}.{key} must not be NaN")
    if np.isinf(val) and not (allow_inf and val > 0):
        raise CliError(f"config {section}.{key} must be finite")
    if minimum is not None and val < minimum:
        raise CliError(f"config {section}.{key} must be >= {minimum}")
    return val


def _validate_config(cfg):
    _require_number(cfg, "benchmark", "snr_db", allow_inf=True)
    _require_number(cfg, "benchmark", "ts", minimum=1e-12)
    for key in ("n_train", "n_test"):
        if int(_require_number(cfg, "benchmark", key, minimum=2)) != cfg["benchmark"][key]:
            raise CliError(f"config benchmark.{key} must be an integer")
    for section in ("lti", "lpv"):
        _require_number(cfg, section, "restarts", minimum=1)
        _require_number(cfg, section, "adam_iterations", minimum=0)
        _require_number(cfg, section, "adam_learning_rate", minimum=1e-12)
        _require_number(cfg, section, "lbfgs_max_iterations", minimum=0)
        _require_number(cfg, section, "n_x_hat", minimum=1)
        _require_number(cfg, section, "divergence_penalty", minimum=1.0)
        _require_number(cfg, section, "divergence_bound", minimum=1.0)
    _require_number(cfg, "lpv", "n_p", minimum=0)
    _require_number(cfg, "lpv", "sigma_e_scale", minimum=1e-12)
    _require_number(cfg, "lpv", "m0_var", minimum=1e-12)
    _require_number(cfg, "lpv", "default_var", minimum=1e-12)
    _require_number(cfg, "predict", "n_sigma", minimum=1e-12)
    hidden = cfg["lpv"]["hidden"]
    if not isinstance(hidden, list) or any(
            isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden):
        raise CliError("config lpv.hidden must be a list of positive integers")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise CliError("config seed must be an integer")


def load_config(path=None):
    """Defaults overlaid with a user JSON config; unknown keys rejected."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc})") from None
        _merge(cfg, user, [])
    _validate_config(cfg)
    return cfg


def _config_digest(cfg):
    return hashlib.sha256(_jsonio.dumps(cfg).encode()).hexdigest()


def _subseed(seed, tag):
    """Stable derived seed so each command owns its RNG streams."""
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _write_manifest(out_dir, command, cfg, inputs, outputs, timings):
    doc = {
        "format": "lpvuq-manifest",
        "version": __version__,
        "command": command,
        "config_digest": _config_digest(cfg),
        "inputs": [os.fspath(p) for p in inputs],
        "outputs": [os.fspath(p) for p in outputs],
        "seed": cfg["seed"],
        "timings": timings,
    }
    path = os.path.join(out_dir, f"{command}.manifest.json")
    _jsonio.dump(doc, path)
    return path


def _fit_config(sec, seed, m0_init):
    return FitConfig(
        adam_iterations=int(sec["adam_iterations"]),
        adam_learning_rate=float(sec["adam_learning_rate"]),
        lbfgs_max_iterations=int(sec["lbfgs_max_iterations"]),
        lbfgs_memory=int(sec["lbfgs_memory"]),
        lbfgs_grad_tol=float(sec["lbfgs_grad_tol"]),
        lbfgs_ftol=float(sec["lbfgs_ftol"]),
        restarts=int(sec["restarts"]),
        seed=seed,
        divergence_penalty=float(sec["divergence_penalty"]),
        divergence_bound=float(sec["divergence_bound"]),
        m_init_std=float(sec.get("m_init_std", 0.01)),
        m0_init=m0_init,
        m0_init_scale=float(sec.get("m0_init_scale", 0.3)),
        m0_spectral_radius=float(sec.get("m0_spectral_radius", 0.7)),
    )


def _read_dataset(path):
    if not os.path.exists(path):
        raise CliError(f"dataset not found: {path}")
    return read_dataset(path)


def _load_model_file(path):
    if not os.path.exists(path):
        raise CliError(f"model file not found: {path}")
    return load_model(path)


def _norm_from_doc(doc):
    return None if doc is None else NormRecord.from_dict(doc)


def _denorm_output(y_norm, rec):
    if rec is None:
        return y_norm
    return y_norm * rec.y_scale + rec.y_mean


def _simulation_bfr(model, x0, ds_phys, rec, bound=1e9):
    ds = apply_record(ds_phys, rec) if rec is not None else ds_phys
    y_hat, _, _ = simulate(model, ds.u, x0, divergence_bound=bound)
    return bfr(ds_phys.y, _denorm_output(y_hat, rec))


def _restart_summary(result):
    return {
        "best_restart": result.diagnostics["best_restart"],
        "restart_costs": result.restart_costs,
        "stop_reasons": [r["lbfgs_stop_reason"] for r in result.diagnostics["restarts"]],
        "diverged_evals": [r["diverged_evals"] for r in result.diagnostics["restarts"]],
    }


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, cfg):
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    bench = cfg["benchmark"]
    t0 = time.perf_counter()
    train, test, meta = generate_benchmark_datasets(BenchmarkConfig(
        seed=cfg["seed"], snr_db=float(bench["snr_db"]), ts=float(bench["ts"]),
        n_train=int(bench["n_train"]), n_test=int(bench["n_test"])))
    t_sim = time.perf_counter() - t0
    train_path = os.path.join(out, "train.csv")
    test_path = os.path.join(out, "test.csv")
    t0 = time.perf_counter()
    write_dataset(train, train_path, meta={"kind": "train", "seed": meta["seed"],
                                           "snr_db": meta["snr_db"],
                                           "sigma_e_diag": meta["sigma_e_train"]})
    write_dataset(test, test_path, meta={"kind": "test", "seed": meta["seed"],
                                         "snr_db": meta["snr_db"],
                                         "sigma_e_diag": meta["sigma_e_test"]})
    t_io = time.perf_counter() - t0
    _write_manifest(out, "generate", cfg, [],
                    [train_path, test_path],
                    {"simulate_s": t_sim, "write_s": t_io})
    print(f"generate: train.csv ({train.n_samples} samples), "
          f"test.csv ({test.n_samples} samples) -> {out}")
    return 0


def cmd_fit_lti(args, cfg):
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    train_phys, _ = _read_dataset(args.train)
    ds_norm, rec = normalize(train_phys)
    sec = cfg["lti"]
    fc = _fit_config(sec, _subseed(cfg["seed"], 10), m0_init="random")
    dims = ModelDims(int(sec["n_x_hat"]), ds_norm.n_u, ds_norm.n_y, 0, hidden=())
    t0 = time.perf_counter()
    _, x_hat_0, result = fit_lti_prior(ds_norm, dims, fc, jobs=args.jobs)
    t_fit = time.perf_counter() - t0
    model_path = os.path.join(out, "lti_model.json")
    save_model(result.model, model_path, x_hat_0=x_hat_0, normalization=rec.to_dict())
    bfr_train = _simulation_bfr(result.model, x_hat_0, train_phys, rec)
    report = {
        "model": os.path.basename(model_path),
        "cost": result.cost,
        "n_theta_trained": result.theta_map.shape[0] + x_hat_0.shape[0],
        "bfr_train": bfr_train,
        "bfr_test": None,
    }
    inputs = [args.train]
    if args.test:
        test_phys, _ = _read_dataset(args.test)
        report["bfr_test"] = _simulation_bfr(result.model, x_hat_0, test_phys, rec)
        inputs.append(args.test)
    report.update(_restart_summary(result))
    report_path = os.path.join(out, "fit-lti-report.json")
    _jsonio.dump(report, report_path)
    _write_manifest(out, "fit-lti", cfg, inputs, [model_path, report_path],
                    {"fit_s": t_fit})
    msg = f"fit-lti: train BFR {bfr_train:.2f}"
    if report["bfr_test"] is not None:
        msg += f", test BFR {report['bfr_test']:.2f}"
    print(msg + f", cost {result.cost:.6g}")
    return 0


def cmd_fit(args, cfg):
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    train_phys, _ = _read_dataset(args.train)
    prior_loaded = _load_model_file(args.prior_model)
    rec = _norm_from_doc(prior_loaded.normalization)
    if rec is None:
        ds_norm, rec = normalize(train_phys)
    else:
        ds_norm = apply_record(train_phys, rec)
    sec = cfg["lpv"]
    dims = ModelDims(int(sec["n_x_hat"]), ds_norm.n_u, ds_norm.n_y,
                     int(sec["n_p"]), hidden=tuple(sec["hidden"]))
    layout = dims.layout()
    m0 = prior_loaded.model.matrices[0]
    if m0.shape != (dims.n_x_hat + dims.n_y, dims.n_x_hat + dims.n_u):
        raise CliError("prior model dimensions do not match lpv.n_x_hat/data")
    sigma_e = float(sec["sigma_e_scale"]) * np.eye(ds_norm.n_y)
    prior = build_prior(layout, m0, sigma_e,
                        m0_var=float(sec["m0_var"]),
                        default_var=float(sec["default_var"]))
    fc = _fit_config(sec, _subseed(cfg["seed"], 11), m0_init="prior_mean")
    t0 = time.perf_counter()
    result = multi_start_fit(ds_norm, dims, prior, fc, jobs=args.jobs)
    t_fit = time.perf_counter() - t0
    model_path = os.path.join(out, "lpv_model.json")
    save_model(result.model, model_path, x_hat_0=result.x_hat_0,
               normalization=rec.to_dict())
    bfr_train = _simulation_bfr(result.model, result.x_hat_0, train_phys, rec)
    report = {
        "model": os.path.basename(model_path),
        "cost": result.cost,
        "n_theta_trained": result.theta_map.shape[0] + result.x_hat_0.shape[0],
        "bfr_train": bfr_train,
    }
    report.update(_restart_summary(result))
    report_path = os.path.join(out, "fit-report.json")
    _jsonio.dump(report, report_path)
    _write_manifest(out, "fit", cfg, [args.train, args.prior_model],
                    [model_path, report_path], {"fit_s": t_fit})
    print(f"fit: train BFR {bfr_train:.2f}, cost {result.cost:.6g}, "
          f"n_theta {report['n_theta_trained']}")
    return 0


def cmd_laplace(args, cfg):
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    loaded = _load_model_file(args.model)
    train_phys, _ = _read_dataset(args.train)
    rec = _norm_from_doc(loaded.normalization)
    ds = apply_record(train_phys, rec) if rec is not None else train_phys
    model = loaded.model
    x0 = loaded.x_hat_0 if loaded.x_hat_0 is not None else np.zeros(model.n_x_hat)
    sec = cfg["lpv"]
    sigma_e = float(sec["sigma_e_scale"]) * np.eye(model.n_y)
    prior = build_prior(model.layout, model.matrices[0], sigma_e,
                        m0_var=float(sec["m0_var"]),
                        default_var=float(sec["default_var"]))
    t0 = time.perf_counter()
    posterior = laplace_fit(dims_from_model(model), pack_params(model), x0, ds, prior,
                            divergence_bound=float(sec["divergence_bound"]))
    t_lap = time.perf_counter() - t0
    post_path = os.path.join(out, "posterior.json")
    save_posterior(posterior, post_path)
    _write_manifest(out, "laplace", cfg, [args.model, args.train], [post_path],
                    {"laplace_s": t_lap})
    sd_max = float(np.sqrt(np.diag(posterior.sigma_ap)).max())
    print(f"laplace: posterior over {posterior.n_theta} parameters, "
          f"max sd {sd_max:.4g} -> {post_path}")
    return 0


def _gnuplot_script(csv_name, n_y):
    lines = [
        f"# plot bands from {csv_name}",
        "set datafile separator ','",
        "set xlabel 't [s]'",
        "set ylabel 'output'",
        "set key outside",
    ]
    plots = []
    for i in range(n_y):
        base = 2 + 6 * i
        plots.append(f"'{csv_name}' every ::1 using 1:{base + 2}:{base + 3} "
                     f"with filledcurves fs transparent solid 0.25 title 'ch{i + 1} band'")
        plots.append(f"'{csv_name}' every ::1 using 1:{base} "
                     f"with lines title 'ch{i + 1} mean'")
    lines.append("plot \\\n  " + ", \\\n  ".join(plots))
    lines.append("pause -1")
    return "\n".join(lines) + "\n"


def cmd_predict(args, cfg):
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    loaded = _load_model_file(args.model)
    if not os.path.exists(args.posterior):
        raise CliError(f"posterior file not found: {args.posterior}")
    posterior = load_posterior(args.posterior)
    ds_phys, _ = _read_dataset(args.dataset)
    rec = _norm_from_doc(loaded.normalization)
    ds = apply_record(ds_phys, rec) if rec is not None else ds_phys
    model = loaded.model
    x0 = loaded.x_hat_0 if loaded.x_hat_0 is not None else np.zeros(model.n_x_hat)
    sigma_e = posterior.meta.get("sigma_e")
    if sigma_e is None:
        raise CliError("posterior file lacks meta.sigma_e")
    n_sigma = args.nsigma if args.nsigma is not None else float(cfg["predict"]["n_sigma"])
    if not n_sigma > 0:
        raise CliError("--nsigma must be positive")
    t0 = time.perf_counter()
    traj = predictive_trajectory(model, posterior, ds.u, x0,
                                 np.asarray(sigma_e), n_sigma=n_sigma)
    t_pred = time.perf_counter() - t0
    if rec is not None:
        # back to physical units: y_phys = diag(scale) y + mean
        scale = np.outer(rec.y_scale, rec.y_scale)
        mean = traj.mean * rec.y_scale + rec.y_mean
        sd = traj.sd * rec.y_scale
        traj = PredictiveTrajectory(
            mean, traj.cov * scale, traj.aleatoric * scale,
            traj.epistemic * scale, sd,
            mean - n_sigma * sd, mean + n_sigma * sd, n_sigma)
    csv_path = os.path.join(out, "prediction.csv")
    write_trajectory_csv(traj, csv_path, ds_phys.ts)
    outputs = [csv_path]
    if args.gnuplot:
        gp_path = os.path.join(out, "prediction.gnuplot")
        with open(gp_path, "w") as fh:
            fh.write(_gnuplot_script(os.path.basename(csv_path), model.n_y))
        outputs.append(gp_path)
    _write_manifest(out, "predict", cfg, [args.model, args.posterior, args.dataset],
                    outputs, {"predict_s": t_pred})
    print(f"predict: {traj.mean.shape[0]} steps, +-{n_sigma:g} sigma bands -> {csv_path}")
    return 0


def cmd_eval(args, cfg):
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    ds, _ = _read_dataset(args.dataset)
    if not os.path.exists(args.trajectory):
        raise CliError(f"trajectory file not found: {args.trajectory}")
    traj = read_trajectory_csv(args.trajectory)
    if traj["mean"].shape != ds.y.shape:
        raise CliError(f"trajectory/dataset shape mismatch: "
                       f"{traj['mean'].shape} vs {ds.y.shape}")

    def coverage(y_ref):
        inside = (y_ref >= traj["lo"]) & (y_ref <= traj["hi"])
        return float(inside.mean()), [float(c) for c in inside.mean(axis=0)]

    cov_meas, cov_meas_ch = coverage(ds.y)
    report = {
        "bfr": bfr(ds.y, traj["mean"]),
        "coverage": cov_meas,
        "coverage_per_channel": cov_meas_ch,
        "n_samples": ds.n_samples,
    }
    if ds.w is not None:
        cov_w, cov_w_ch = coverage(ds.w)
        report["bfr_noise_free"] = bfr(ds.w, traj["mean"])
        report["coverage_noise_free"] = cov_w
        report["coverage_noise_free_per_channel"] = cov_w_ch
    report_path = os.path.join(out, "eval-report.json")
    _jsonio.dump(report, report_path)
    _write_manifest(out, "eval", cfg, [args.dataset, args.trajectory],
                    [report_path], {})
    print(f"eval: BFR {report['bfr']:.2f}, band coverage {report['coverage']:.3f}")
    if ds.w is not None:
        print(f"eval: noise-free BFR {report['bfr_noise_free']:.2f}, "
              f"coverage {report['coverage_noise_free']:.3f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lpvuq",
        description="LPV surrogate identification with Bayesian uncertainty bounds")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("-o", "--output-dir", default=".", help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                           help="parallel restarts (default: all cores)")

    p = sub.add_parser("generate", help="simulate benchmark datasets")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit-lti", help="fit the LTI prior model")
    p.add_argument("train", help="training dataset CSV")
    p.add_argument("--test", default=None, help="optional test dataset CSV")
    common(p, jobs=True)
    p.set_defaults(func=cmd_fit_lti)

    p = sub.add_parser("fit", help="fit the LPV surrogate")
    p.add_argument("train", help="training dataset CSV")
    p.add_argument("prior_model", help="LTI model JSON (prior mean)")
    common(p, jobs=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("laplace", help="posterior covariance at the fitted model")
    p.add_argument("model", help="fitted model JSON")
    p.add_argument("train", help="training dataset CSV")
    common(p)
    p.set_defaults(func=cmd_laplace)

    p = sub.add_parser("predict", help="predictive mean and confidence bands")
    p.add_argument("model", help="fitted model JSON")
    p.add_argument("posterior", help="posterior JSON")
    p.add_argument("dataset", help="input dataset CSV")
    p.add_argument("--nsigma", type=float, default=None,
                   help="half-width of the bands in standard deviations")
    p.add_argument("--gnuplot", action="store_true",
                   help="also write a plain-text gnuplot script")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a trajectory against a dataset")
    p.add_argument("dataset", help="reference dataset CSV")
    p.add_argument("trajectory", help="trajectory CSV from predict")
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (FitDivergedError, DivergenceError, SingularUpdateError,
            NonFiniteActivationError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, FitDivergedError):
            for r, c in enumerate(exc.per_restart_costs):
                print(f"  restart {r}: cost {c:.6g}", file=sys.stderr)
        return 3
    except (CliError, DataFormatError, DimensionMismatchError, ValueError,
            KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
