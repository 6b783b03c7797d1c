"""``monoplant`` command line: data, fits, training, audits, optimisation.

Every command writes ``<out>.manifest.json`` next to its main output.  The
manifest records the resolved arguments (including the seed), input and
output digests, and ``monoplant replay --manifest M`` re-executes the run
and checks the outputs are byte-identical.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .aoi import AoiConfig, ChillerPlant, QuadraticPlant, run_aoi, write_trajectory_csv
from .devicefit import fit_device, read_device_csv
from .errors import (ConfigError, DegenerateWindowError, DivergenceError, FitError, MonoplantError,
                     NonFiniteInputError, SurrogateError)
from .features import ARCHITECTURES, ChillerModel, audit_tol, build_chiller_model
from .kvconfig import read_kv
from .losses import RANK_KINDS, TrainConfig, generate_pairs, mape, train, write_history_csv
from .mbo import (OptimizeConfig, TotalPowerModel, compare_table, evaluate_policy, oracle_controls,
                  read_policy_csv, write_policy_csv)
from .mnn import CHILLER_SPEC, Direction, check_monotonicity, load_model, natural_curves, save_model
from .simulator import (POLICIES, PlantConfig, PlantState, chiller_xy, dataset_arrays, generate_dataset,
                        read_dataset_csv, sample_states, write_dataset_csv)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (DivergenceError, FitError, SurrogateError, NonFiniteInputError, DegenerateWindowError,
                  FloatingPointError, np.linalg.LinAlgError)
DEVICE_COLUMNS = {"tower": ("F_fan", "P_CT"), "cow_pump": ("F_cow_pump", "P_COWP"),
                  "chw_pump": ("F_chw_pump", "P_CHWP")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_seed(seed):
    env = os.environ.get("MONOPLANT_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"MONOPLANT_SEED must be an integer, got {env!r}") from exc
    return seed


def _need_file(path, what):
    if path is None or not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _plant(path):
    return PlantConfig.load(_need_file(path, "plant config")) if path else PlantConfig()


def _data(path):
    samples = read_dataset_csv(_need_file(path, "dataset"))
    if not samples:
        raise ConfigError(f"{path}: dataset has no rows")
    return samples


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--direction expects NAME=DIR, got {item!r}")
        name, d = item.split("=", 1)
        out[name.strip()] = Direction.parse(d)
    return out


def _spec(args):
    spec = CHILLER_SPEC
    if getattr(args, "spec", None):
        spec = spec.with_overrides(read_kv(_need_file(args.spec, "spec file")))
    return spec.with_overrides(_overrides(getattr(args, "direction", None)))


def _hidden(text):
    try:
        widths = tuple(int(w) for w in text.split(",") if w.strip())
    except ValueError as exc:
        raise ConfigError(f"--hidden expects comma-separated integers, got {text!r}") from exc
    if not widths or min(widths) < 1:
        raise ConfigError("--hidden needs at least one positive width")
    return widths


def _load_chiller(path):
    doc = load_model(_need_file(path, "model"))
    if doc.get("type") != "chiller-model":
        raise ConfigError(f"{path}: not a chiller model document")
    return ChillerModel.from_dict(doc["model"]), doc


def _load_devices(path):
    from .devicefit import CubicDeviceModel
    with open(_need_file(path, "device models")) as fh:
        doc = json.load(fh)
    try:
        return {k: CubicDeviceModel.from_dict(doc[k]) for k in DEVICE_COLUMNS}
    except KeyError as exc:
        raise ConfigError(f"{path}: missing device model {exc}") from exc


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, (str, int)) and not isinstance(v, bool) else repr(float(v)) for v in r])


def _states(args, plant, seed):
    if args.states_from:
        samples = _data(args.states_from)
        return [s.state for s in samples[:args.n_states]]
    S = sample_states(plant, args.n_states, np.random.default_rng(seed))
    return [PlantState(*map(float, s)) for s in S]


# ---------------------------------------------------------------------------
# commands; each returns (outputs, inputs)
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    plant = _plant(args.plant)
    if args.policy not in POLICIES:
        raise UsageError(f"unknown policy {args.policy!r}; choose from {', '.join(POLICIES)}")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    samples = generate_dataset(plant, args.policy, args.n, seed=args.seed, noise_sigma=args.noise)
    write_dataset_csv(args.out, samples)
    print(f"wrote {len(samples)} rows to {args.out}")
    return [args.out], [p for p in (args.plant,) if p]


def cmd_fit_device(args):
    plant = _plant(args.plant)
    out = {}
    if args.device_csv:
        if args.p_rated is None or args.f_rated is None:
            raise UsageError("--device-csv needs --p-rated and --f-rated")
        f, p = read_device_csv(_need_file(args.device_csv, "device CSV"))
        m = fit_device(f, p, args.p_rated, args.f_rated, args.l2, method=args.method)
        out[args.name] = m.to_dict()
        inputs = [args.device_csv]
    else:
        cols = dataset_arrays(_data(args.data))
        for name, (fc, pc) in DEVICE_COLUMNS.items():
            ref = getattr(plant, name)
            m = fit_device(cols[fc], cols[pc], ref.p_rated, ref.f_rated, args.l2, method=args.method)
            out[name] = m.to_dict()
        inputs = [args.data]
    for name, d in out.items():
        print(f"{name}: theta = {', '.join(f'{t:.6g}' for t in d['theta'])}")
    save_model(out, args.out)
    return [args.out], inputs + [p for p in (args.plant,) if p]


def cmd_train(args):
    samples = _data(args.data)
    X, y = chiller_xy(samples)
    spec = _spec(args)
    arch = args.arch
    rank = args.rank_loss
    if arch == "soft-mnn" and rank == "none":
        rank = "hinge"
    if rank != "none" and arch in ("hard-mnn", "partial-mnn"):
        raise UsageError("rank losses apply to unconstrained architectures (mlp, soft-mnn)")
    n = X.shape[0]
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(n)
    n_test = int(round(args.test_frac * n))
    if n - n_test < 2:
        raise UsageError("not enough training rows after the test split")
    te, tr = order[:n_test], order[n_test:]
    model = build_chiller_model(arch, args.seed, engineered=not args.raw_features,
                                hidden=_hidden(args.hidden), spec=spec)
    pairs = None
    if rank != "none":
        pairs = generate_pairs(X[tr], spec, args.pair_delta, args.pairs or tr.size, args.seed)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, l2_gamma=args.l2, rank_kind=rank,
                      rank_weight=args.rank_weight, range_weight=args.range_weight,
                      batch_size=args.batch_size, seed=args.seed)
    model, history = train(model, X[tr], y[tr], pairs, cfg)
    train_mape = mape(model.predict(X[tr]), y[tr])
    test_mape = mape(model.predict(X[te]), y[te]) if n_test else float("nan")
    doc = {"type": "chiller-model", "arch": arch, "rank_loss": rank, "model": model.to_dict(),
           "train": {"epochs": cfg.epochs, "lr": cfg.lr, "seed": args.seed, "n_train": int(tr.size),
                     "n_test": int(n_test), "train_mape": train_mape, "test_mape": test_mape}}
    save_model(doc, args.out)
    hist = args.history or args.out + ".history.csv"
    write_history_csv(hist, history)
    print(f"train MAPE {train_mape:.4f}%  test MAPE {test_mape:.4f}%")
    return [args.out, hist], [args.data] + [p for p in (args.spec,) if p]


def _audit_bounds(samples):
    X, _ = chiller_xy(samples)
    return np.stack([X.min(axis=0), X.max(axis=0)], axis=1), X


def cmd_check_mono(args):
    model, _ = _load_chiller(args.model)
    samples = _data(args.data)
    bounds, X = _audit_bounds(samples)
    spec = model.spec.with_overrides(_overrides(args.direction))
    rng = np.random.default_rng(args.seed)
    anchors = X[rng.choice(X.shape[0], size=min(args.anchors, X.shape[0]), replace=False)]
    tol = args.tol if args.tol is not None else audit_tol(model)
    rep = check_monotonicity(model, spec, bounds, grid_n=args.grid, tol=tol, anchors=anchors)
    d = rep.to_dict()
    d["directions"] = spec.to_dict()
    save_model(d, args.out)
    print(f"violations: {rep.count} of {rep.pairs} (rate {rep.rate:.6f}, worst gap {rep.worst_gap:.6g} kW)")
    return [args.out], [args.model, args.data]


def cmd_curves(args):
    model, _ = _load_chiller(args.model)
    samples = _data(args.data)
    bounds, X = _audit_bounds(samples)
    names = model.spec.names
    feats = args.feature or list(names)
    for f in feats:
        if f not in names:
            raise UsageError(f"unknown feature {f!r}; choose from {', '.join(names)}")
    rng = np.random.default_rng(args.seed)
    anchors = X[rng.choice(X.shape[0], size=min(args.anchors, X.shape[0]), replace=False)]
    rows = []
    for f in feats:
        grid, Y = natural_curves(model, names.index(f), bounds, anchors, args.grid)
        for a in range(Y.shape[0]):
            for g, v in zip(grid, Y[a]):
                rows.append((f, a, g, v))
    _write_csv(args.out, ("feature", "anchor", "value", "pred_kw"), rows)
    print(f"wrote {len(rows)} curve points to {args.out}")
    return [args.out], [args.model, args.data]


def cmd_optimize(args):
    plant = _plant(args.plant)
    chiller, _ = _load_chiller(args.model)
    dev = _load_devices(args.devices)
    m = TotalPowerModel(chiller, dev["tower"], dev["cow_pump"], dev["chw_pump"])
    cfg = OptimizeConfig(method=args.method, restarts=args.restarts, max_iter=args.max_iter,
                         lr=args.lr, resolution=args.resolution)
    states = _states(args, plant, args.seed)
    rows = evaluate_policy(m, cfg, plant, states, seed=args.seed)
    write_policy_csv(args.out, rows)
    mean_true = float(np.mean([r.true_kw for r in rows]))
    mean_orc = float(np.mean([r.oracle_true_kw for r in rows]))
    print(f"{len(rows)} states: mean true P_total {mean_true:.4f} kW, oracle {mean_orc:.4f} kW")
    ins = [args.model, args.devices] + [p for p in (args.plant, args.states_from) if p]
    return [args.out], ins


def cmd_oracle(args):
    plant = _plant(args.plant)
    states = _states(args, plant, args.seed)
    from .mbo import PolicyRow
    rows = []
    for i, s in enumerate(states):
        c, f = oracle_controls(plant, s, args.resolution)
        rows.append(PolicyRow(i, s.T_wb, float(c[1]), float(c[0]), f, f, f))
    write_policy_csv(args.out, rows)
    print(f"{len(rows)} states: mean oracle P_total {np.mean([r.true_kw for r in rows]):.4f} kW")
    return [args.out], [p for p in (args.plant, args.states_from) if p]


def cmd_aoi(args):
    if args.toy:
        plant = QuadraticPlant()
        cfg = AoiConfig.load(args.config, plant.bounds) if args.config else \
            AoiConfig(bounds=plant.bounds, sigma=0.25, eps=0.5, s_unit=0.01, c0=[0.5])
    else:
        pc = _plant(args.plant)
        state = PlantState(*args.state) if args.state else None
        plant = ChillerPlant(pc, state) if state else ChillerPlant(pc)
        cfg = AoiConfig.load(args.config, plant.bounds) if args.config else AoiConfig(bounds=plant.bounds)
    cfg.seed = args.seed
    if args.T < 1:
        raise UsageError("--T must be >= 1")
    traj, diag = run_aoi(plant, cfg, args.T)
    write_trajectory_csv(args.out, traj, diag)
    print(f"final iterate {np.round(diag.final_c, 4).tolist()}, optimum {diag.f_star:.4f}, "
          f"mean regret {float(np.mean(diag.regret)):.4f}")
    return [args.out], [p for p in (args.plant, args.config) if p]


def cmd_compare(args):
    methods, inputs = {}, []
    for item in args.method:
        if "=" not in item:
            raise UsageError(f"--method expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        if name in methods:
            raise UsageError(f"duplicate method name {name!r}")
        rows = read_policy_csv(_need_file(path, "policy CSV"))
        col = "oracle_true_kw" if name == "oracle" else "true_kw"
        methods[name] = [(r.T_wb, getattr(r, col)) for r in rows]
        inputs.append(path)
    header, rows = compare_table(methods, args.bucket)
    _write_csv(args.out, header, rows)
    for r in rows:
        print(" ".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r))
    return [args.out], inputs


# ---------------------------------------------------------------------------
# parser, manifests, entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="monoplant", description="Monotone surrogate modelling and control of a chiller plant.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        return sp

    sp = add("gen-data", cmd_gen_data, "simulate a plant dataset")
    sp.add_argument("--plant")
    sp.add_argument("--policy", default="explore")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--noise", type=float)

    sp = add("fit-device", cmd_fit_device, "fit cubic fan/pump models")
    sp.add_argument("--data")
    sp.add_argument("--plant")
    sp.add_argument("--device-csv")
    sp.add_argument("--name", default="device")
    sp.add_argument("--p-rated", type=float)
    sp.add_argument("--f-rated", type=float)
    sp.add_argument("--l2", type=float, default=0.0)
    sp.add_argument("--method", choices=("gd", "closed"), default="gd")

    sp = add("train", cmd_train, "train a chiller power model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--arch", choices=ARCHITECTURES, default="hard-mnn")
    sp.add_argument("--rank-loss", choices=RANK_KINDS, default="none")
    sp.add_argument("--rank-weight", type=float)
    sp.add_argument("--range-weight", type=float, default=0.1)
    sp.add_argument("--pairs", type=int)
    sp.add_argument("--pair-delta", type=float, default=0.05)
    sp.add_argument("--epochs", type=int, default=300)
    sp.add_argument("--lr", type=float, default=0.03)
    sp.add_argument("--l2", type=float, default=1e-4)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--hidden", default="16,16")
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.add_argument("--raw-features", action="store_true", help="skip the engineered features")
    sp.add_argument("--spec")
    sp.add_argument("--direction", action="append", metavar="NAME=DIR")
    sp.add_argument("--history")

    for name, fn, help_ in (("check-mono", cmd_check_mono, "audit natural curves for violations"),
                            ("curves", cmd_curves, "export natural curves")):
        sp = add(name, fn, help_)
        sp.add_argument("--model", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--anchors", type=int, default=20)
        sp.add_argument("--grid", type=int, default=20)
        if name == "check-mono":
            sp.add_argument("--tol", type=float, help="default 1e-9 for constrained models, 1e-4 kW otherwise")
            sp.add_argument("--direction", action="append", metavar="NAME=DIR")
        else:
            sp.add_argument("--feature", action="append")

    for name, fn, help_ in (("optimize", cmd_optimize, "optimise controls on a learned surrogate"),
                            ("oracle", cmd_oracle, "best controls on the true plant")):
        sp = add(name, fn, help_)
        sp.add_argument("--plant")
        sp.add_argument("--states-from")
        sp.add_argument("--n-states", type=int, default=50)
        sp.add_argument("--resolution", type=int, default=101)
        if name == "optimize":
            sp.add_argument("--model", required=True)
            sp.add_argument("--devices", required=True)
            sp.add_argument("--method", choices=("pg", "grid"), default="pg")
            sp.add_argument("--restarts", type=int, default=8)
            sp.add_argument("--max-iter", type=int, default=500)
            sp.add_argument("--lr", type=float, default=1.0)

    sp = add("aoi", cmd_aoi, "run the online optimiser against the simulator")
    sp.add_argument("--plant")
    sp.add_argument("--config")
    sp.add_argument("--T", type=int, default=500)
    sp.add_argument("--toy", action="store_true", help="use the 1-D quadratic test plant")
    sp.add_argument("--state", type=float, nargs=4, metavar=("T_WB", "T_CHW_IN", "T_CHW_OUT", "F_CHW_PUMP"))

    sp = add("compare", cmd_compare, "tabulate policies by wet-bulb bucket")
    sp.add_argument("--method", action="append", required=True, metavar="NAME=PATH")
    sp.add_argument("--bucket", type=float, default=1.0)

    rp = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    rp.add_argument("--manifest", required=True)
    rp.set_defaults(func=None)
    return p


def _manifest_path(out):
    return out + ".manifest.json"


def _write_manifest(args, argv, outputs, inputs, duration):
    doc = {
        "command": args.command,
        "argv": argv,
        "seed": args.seed,
        "config": getattr(args, "config", None) or getattr(args, "plant", None),
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {p: sha256_file(p) for p in outputs},
        "version": __version__,
        "duration_s": duration,
    }
    with open(_manifest_path(args.out), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return doc


def _replay(path):
    with open(_need_file(path, "manifest")) as fh:
        doc = json.load(fh)
    for p, digest in doc.get("inputs", {}).items():
        if not os.path.isfile(p) or sha256_file(p) != digest:
            raise ConfigError(f"input {p} is missing or changed since the recorded run")
    saved = os.environ.pop("MONOPLANT_SEED", None)
    try:
        code = _run(doc["argv"])
    finally:
        if saved is not None:
            os.environ["MONOPLANT_SEED"] = saved
    if code != EXIT_OK:
        return code
    bad = [p for p, digest in doc["outputs"].items() if sha256_file(p) != digest]
    if bad:
        print(f"replay mismatch: {', '.join(bad)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"replay ok: {len(doc['outputs'])} outputs identical")
    return EXIT_OK


def _run(argv):
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required (see --help)")
    if args.command == "replay":
        return _replay(args.manifest)
    args.seed = resolve_seed(args.seed)
    # record the resolved seed; argparse keeps the last occurrence
    resolved = list(argv) + ["--seed", str(args.seed)]
    t0 = time.perf_counter()
    outputs, inputs = args.func(args)
    _write_manifest(args, resolved, outputs, inputs, time.perf_counter() - t0)
    return EXIT_OK


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MonoplantError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
