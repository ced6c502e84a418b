"""Command-line entry point: ``walkback <command> [options]``.

Every command writes its outputs atomically, saves the resolved run
configuration next to them, and on failure prints one JSON line
``{"error": <kind>, "message": <text>}`` to stderr with a nonzero exit code.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as datamod
from . import estimators, oracle
from .errors import ConfigError, WalkbackError
from .operators import BernoulliOperator, GaussianOperator, TabularOperator
from .schedule import RULES, TemperatureSchedule, make_cooling, make_heating, n_heated
from .training import TrainConfig, cool, load_operator, resolve_tmax, train

log = logging.getLogger("walkback")

SEED_ENV = "WALKBACK_SEED"
EXIT_ERROR = 2


@dataclass
class RunConfig:
    """Everything a command needs to reproduce its outputs."""

    command: str
    seed: int
    out: str
    dataset: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite_json(obj):
    """Replace non-finite floats by strings so the output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_json(v) for v in obj]
    return obj


def _dump_json(path, payload):
    text = json.dumps(_finite_json(json.loads(json.dumps(payload, default=_json_default))),
                      indent=2, sort_keys=True)
    ckpt.atomic_write_text(path, text + "\n")


def _resolve_seed(args):
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int(args.seed)


def _config_path(out):
    out = Path(out)
    return out / "run_config.json" if out.is_dir() else out.with_name(out.name + ".run.json")


def _save_run(run):
    ckpt.atomic_write_text(_config_path(run.out), run.to_json() + "\n")


# -- data and models ------------------------------------------------------------


def _load_points(args, seed):
    """Dataset from ``--data`` (CSV) or generated from ``--dataset``/``--n``."""
    if getattr(args, "data", None):
        ds = datamod.load_csv(args.data, header=True if args.header else None)
        source = {"path": str(args.data)}
    elif getattr(args, "dataset", None):
        ds = datamod.generate(args.dataset, args.n, np.random.default_rng(seed), args.noise)
        source = {"name": args.dataset, "n": args.n, "noise": args.noise}
    else:
        raise ConfigError("give --data FILE or --dataset NAME")
    return ds, source


def _build_operator(args, dim, n_levels, rng):
    if args.operator == "gaussian":
        return GaussianOperator.create(dim, tuple(args.hidden), args.activation, args.alpha,
                                       args.base_variance, n_steps=n_levels, rng=rng)
    if args.operator == "bernoulli":
        return BernoulliOperator.create(dim, tuple(args.hidden), args.activation, args.alpha,
                                        n_steps=n_levels, rng=rng)
    if args.operator == "tabular":
        if args.n_states is None:
            raise ConfigError("--n-states is required for the tabular operator")
        return TabularOperator.create(args.n_states, rng=rng)
    raise ConfigError(f"unknown operator {args.operator!r}")


def _train_config(args, seed, tmax, rule, factor):
    return TrainConfig(N1=args.n1, tmax=tmax, rule=rule, factor=factor, lr=args.lr,
                       optimizer=args.optimizer, batch_size=args.batch_size,
                       max_epochs=args.epochs, patience=args.patience, seed=seed,
                       update_mode=args.update_mode, diag_chain_length=args.diag_chain_length)


def _steps_factor(tmax, steps):
    """Geometric factor reaching ``tmax`` in exactly ``steps`` heated steps."""
    if steps < 1:
        raise ConfigError("--steps must be >= 1")
    if tmax <= 1.0:
        raise ConfigError("--steps needs Tmax > 1")
    return tmax ** (1.0 / steps)


def _model_schedule(meta):
    tr = meta["training"]
    cfg = tr["config"]
    return make_heating(tr["Tmax"], cfg["N1"], cfg["rule"], cfg["factor"])


# -- commands -------------------------------------------------------------------


def cmd_gen_data(args):
    seed = _resolve_seed(args)
    ds = datamod.generate(args.dataset, args.n, np.random.default_rng(seed), args.noise)
    datamod.save_csv(ds, args.out, header=args.header)
    run = RunConfig("gen-data", seed, str(args.out),
                    dataset={"name": args.dataset, "n": args.n, "noise": args.noise})
    _save_run(run)
    return {"n": len(ds), "dim": ds.dim, "out": str(args.out)}


def cmd_train(args):
    seed = _resolve_seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, source = _load_points(args, seed)
    ds = datamod.with_splits(ds, np.random.default_rng([seed, 1]))
    train_pts, val_pts = ds.split("train"), ds.split("validation")

    rng = np.random.default_rng([seed, 2])
    rule, factor = args.rule, args.factor
    probe = _build_operator(args, ds.dim, 0, rng)
    tmax = resolve_tmax(probe, probe.prepare(train_pts), TrainConfig(tmax=args.tmax))
    if args.steps is not None:
        rule, factor = "geometric", _steps_factor(tmax, args.steps)
    n_levels = n_heated(tmax, rule, factor) + 1 if args.per_step else 0
    op = _build_operator(args, ds.dim, n_levels, np.random.default_rng([seed, 2]))
    config = _train_config(args, seed, tmax, rule, factor)

    run = RunConfig("train", seed, str(out), dataset=source,
                    schedule=make_heating(tmax, args.n1, rule, factor).to_dict(),
                    train=config.to_dict(),
                    options={"operator": args.operator, "hidden": list(args.hidden),
                             "activation": args.activation, "alpha": args.alpha,
                             "base_variance": args.base_variance, "per_step": args.per_step,
                             "n_states": args.n_states})
    _save_run(run)
    result = train(op, train_pts, val_pts, config, checkpoint_path=out / "checkpoint.npz",
                   log_path=out / "train_log.csv")
    arrays, meta = op.to_arrays()
    ckpt.write_checkpoint(out / "model.npz", arrays, {
        "operator": meta,
        "training": {"Tmax": result.Tmax, "config": config.to_dict(),
                     "best_epoch": result.best_epoch, "best_val_bound": result.best_val_bound}})
    datamod.save_csv(ds.split("test"), out / "test.csv")
    return {"best_epoch": result.best_epoch, "best_val_bound": result.best_val_bound,
            "epochs_run": len(result.log), "stopped_early": result.stopped_early,
            "Tmax": result.Tmax, "out": str(out)}


def cmd_sample(args):
    seed = _resolve_seed(args)
    if args.n < 0:
        raise ConfigError("--n must be >= 0")
    op, meta = load_operator(args.checkpoint)
    cooling = make_cooling(_model_schedule(meta), args.extra_flat_steps)
    rng = np.random.default_rng(seed)
    out = Path(args.out)
    width = getattr(op, "dim", 1)
    dump = []
    if args.n == 0:
        samples = np.empty((0, width))
    elif args.every_k:
        samples, dump = cool(op, cooling, args.n, rng, every_k=args.every_k)
    else:
        samples = cool(op, cooling, args.n, rng)
    samples = np.asarray(samples, dtype=np.float64).reshape(args.n, width)
    ckpt.atomic_write_text(out, datamod.format_rows(samples, args.header) if args.n else
                           (",".join(f"x{i}" for i in range(width)) + "\n" if args.header else ""))
    if dump:
        rows = [",".join(["step", "chain"] + [f"x{i}" for i in range(width)])]
        for step, states in dump:
            states = np.asarray(states, dtype=np.float64).reshape(args.n, width)
            for c, row in enumerate(states):
                rows.append(",".join([str(step), str(c)] + [repr(float(v)) for v in row]))
        ckpt.atomic_write_text(out.with_name(out.stem + "_chain.csv"), "\n".join(rows) + "\n")
    _save_run(RunConfig("sample", seed, str(out), schedule=cooling.to_dict(),
                        options={"checkpoint": str(args.checkpoint), "n": args.n,
                                 "extra_flat_steps": args.extra_flat_steps,
                                 "every_k": args.every_k}))
    return {"n": args.n, "steps": cooling.K, "out": str(out)}


def cmd_evaluate(args):
    seed = _resolve_seed(args)
    op, meta = load_operator(args.checkpoint)
    heating = _model_schedule(meta)
    ds = datamod.load_csv(args.data, header=True if args.header else None)
    report = estimators.evaluate_points(op, heating, ds.points, args.n_traj, seed, args.threads)
    report["K"] = heating.K
    _dump_json(args.out, report)
    _save_run(RunConfig("evaluate", seed, str(args.out), dataset={"path": str(args.data)},
                        schedule=heating.to_dict(),
                        options={"checkpoint": str(args.checkpoint), "n_traj": args.n_traj}))
    return report


def cmd_diagnose(args):
    seed = _resolve_seed(args)
    op, _ = load_operator(args.checkpoint)
    rep = estimators.reversibility_report(op, args.temperature, args.chain_length, args.burn_in,
                                          np.random.default_rng(seed), n_chains=args.chains)
    payload = rep.to_dict()
    _dump_json(args.out, payload)
    _save_run(RunConfig("diagnose", seed, str(args.out),
                        options={"checkpoint": str(args.checkpoint), "temperature": args.temperature,
                                 "chain_length": args.chain_length, "burn_in": args.burn_in,
                                 "chains": args.chains}))
    return payload


def _oracle_schedule(args, file_temps):
    if args.tmax is not None:
        return make_heating(args.tmax, args.n1, args.rule, args.factor)
    temps = tuple(float(T) for T in file_temps)
    return TemperatureSchedule(temps, tuple(range(len(temps))), 0, max(temps), "heating", "file",
                               1.0)


def cmd_oracle(args):
    chain, file_temps = oracle.load_chain(args.chain)
    schedule = _oracle_schedule(args, file_temps)
    starts = range(chain.n_states) if args.start is None else [args.start]
    per_start = []
    for s0 in starts:
        dec = oracle.exact_decomposition(chain, schedule, s0)
        split = oracle.kl_split(chain, schedule, s0)
        per_start.append({"s0": s0, **asdict(dec), **{k: v for k, v in asdict(split).items()
                                                      if k not in ("kl_posterior", "method")},
                          "split_residual": split.residual})
    temps = []
    for T in sorted(set(schedule.temps)):
        P = chain.P(T)
        entry = {"T": T, "irreducible": bool(oracle.is_irreducible(P))}
        if entry["irreducible"]:
            pi, PR = oracle.time_reversal(P)
            entry.update({
                "stationary": pi.tolist(),
                "reversal_row_sum_error": float(np.abs(PR.sum(axis=1) - 1).max()),
                "reversal_stationarity_error": float(np.abs(pi @ PR - pi).max()),
                "detailed_balance_residual": oracle.detailed_balance_residual(P, pi),
                "reversal_distance": float(np.abs(PR - P).max()),
                "stationary_kl": oracle.stationary_kl(P),
            })
        temps.append(entry)
    worst = max(max(abs(r["residual"]), abs(r["split_residual"])) for r in per_start)
    report = {"schedule": schedule.to_dict(), "starts": per_start, "temperatures": temps,
              "max_identity_residual": worst,
              "irreversibility_term_max": max(r["irreversibility_term"] for r in per_start)}
    _dump_json(args.out, report)
    return report


def _read_vector(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{path}: expected whitespace- or comma-separated numbers") from None
    if not vals:
        raise ConfigError(f"{path}: empty distribution")
    return np.array(vals)


def cmd_divergence(args):
    p, q = _read_vector(args.p), _read_vector(args.q)
    js = estimators.js_divergence(p, q, args.pi)
    kl_pq, kl_qp = estimators.kl_divergence(p, q), estimators.kl_divergence(q, p)
    check = estimators.jeffreys_bound_check(p, q)
    _, mi, diff = estimators.mutual_info_identity_check(p, q, args.pi)
    report = {"pi": args.pi, "js": js, "kl_pq": kl_pq, "kl_qp": kl_qp,
              "jeffreys": check.jeffreys, "bound1": check.bound1, "bound2": check.bound2, "mi": mi,
              "identity_diff": diff}
    _dump_json(args.out, report)
    return report


# -- parser -----------------------------------------------------------------------


def _schedule_flags(p, tmax_default=None):
    p.add_argument("--n1", type=int, default=5, help="max number of T=1 steps (n ~ U{0..N1})")
    p.add_argument("--tmax", type=float, default=tmax_default)
    p.add_argument("--rule", choices=RULES, default="doubling")
    p.add_argument("--factor", type=float, default=None, help="ratio for the geometric rule")


def build_parser():
    parser = argparse.ArgumentParser(prog="walkback", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--header", action="store_true", help="CSV files carry a header row")

    p = sub.add_parser("gen-data", help="generate a toy dataset as CSV")
    common(p, "CSV file")
    p.add_argument("--dataset", choices=datamod.GENERATORS, default="swiss_roll")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an operator by walkback")
    common(p, "output directory")
    p.add_argument("--data", help="CSV of training points")
    p.add_argument("--dataset", choices=datamod.GENERATORS)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--operator", choices=("gaussian", "bernoulli", "tabular"), default="gaussian")
    p.add_argument("--n-states", type=int, default=None)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    p.add_argument("--activation", default="tanh")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--base-variance", type=float, default=0.01)
    p.add_argument("--per-step", action=argparse.BooleanOptionalAction, default=True,
                   help="per-level gain/shift tables in hidden layers")
    _schedule_flags(p)
    p.add_argument("--steps", type=int, default=None,
                   help="number of heated steps; switches to a geometric rule reaching Tmax")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--update-mode", choices=("online", "accumulated"), default="online")
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--diag-chain-length", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate samples with the cooling schedule")
    common(p, "samples CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000, help="number of chains")
    p.add_argument("--extra-flat-steps", type=int, default=0)
    p.add_argument("--every-k", type=int, default=0, help="also dump every k-th chain state")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="bound and importance-sampled log-likelihood")
    common(p, "JSON report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n-traj", type=int, default=100)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="reversibility of the operator at a fixed temperature")
    common(p, "JSON report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--chain-length", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--chains", type=int, default=16)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("oracle", help="exact identities on a small chain file")
    common(p, "JSON report")
    p.add_argument("--chain", required=True)
    p.add_argument("--start", type=int, default=None, help="single start state (default: all)")
    _schedule_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("divergence", help="JS/KL/Jeffreys toolkit on two distributions")
    common(p, "JSON report")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--pi", type=float, default=0.5)
    p.set_defaults(func=cmd_divergence)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except (WalkbackError, ValueError, OSError, KeyError) as exc:
        kind = type(exc).__name__
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(_finite_json(json.loads(json.dumps(summary, default=_json_default))),
                     sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
