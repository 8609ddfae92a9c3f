"""Command-line front end.

Subcommands: ``run <config>`` executes a declarative experiment;
``train``, ``sample``, ``spectrum``, ``dataset gen`` and ``fixed-point``
expose the corresponding library operations directly.  Flags mirror the
config keys and override config values.  Exit status: 0 on success, 1
on runtime failure, 2 on usage errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import boltzmann, datasets, gaussian, master_equation as meq
from .experiments import (ConfigError, ExperimentError, EXPERIMENTS, _COMMON_KEYS,
                          _parse_value, parse_config, resolve_config, run_experiment,
                          write_csv)
from .numerics import rng_stream

OUT_ROOT_ENV = "EBMLAB_OUT_ROOT"


def _out_dir(path: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV, "")
    return os.path.join(root, path) if root and not os.path.isabs(path) else path


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    values = {"experiment": cfg.experiment, "seed": cfg.seed, "out_dir": cfg.out_dir,
              **cfg.params}
    schema = dict(_COMMON_KEYS, **EXPERIMENTS[cfg.experiment])
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"--set: unknown key {key!r} for {cfg.experiment!r}")
        values[key] = _parse_value(schema[key][0], raw.strip(), "<--set>", 0)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out is not None:
        values["out_dir"] = args.out
    values["out_dir"] = _out_dir(values["out_dir"])
    summary = run_experiment(resolve_config(values))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    values = {
        "experiment": "custom",
        "seed": args.seed,
        "out_dir": _out_dir(args.out),
        "dataset_path": args.dataset,
        "scheme": args.scheme,
        "k": args.k,
        "gamma": args.gamma,
        "n_updates": args.updates,
        "m_chains": args.chains,
        "checkpoint_every": args.checkpoint_every,
    }
    summary = run_experiment(resolve_config(values))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_sample(args) -> int:
    model = datasets.load_model(args.model)
    out = _out_dir(args.out)
    os.makedirs(out, exist_ok=True)
    rng = rng_stream(args.seed, 0)
    init = None
    if args.scheme == "data-init":
        if not args.dataset:
            raise ExperimentError("data-init sampling requires --dataset")
        init = datasets.load_spin_dataset(args.dataset).samples.astype(float)
    samples, est = boltzmann.sample_k(model, args.scheme, args.k, args.chains, rng,
                                      init_source=init)
    ds = datasets.SpinDataset(samples=samples.astype(np.int8), provenance={
        "generator": "model-heatbath", "model": os.path.abspath(args.model),
        "scheme": args.scheme, "k": args.k, "n_samples": args.chains, "seed": args.seed,
    })
    datasets.save_spin_dataset(ds, os.path.join(out, "samples.txt"))
    write_csv(os.path.join(out, "means.csv"), ["i", "mean", "se"],
              [(i, m, s) for i, (m, s) in enumerate(zip(est.means, est.se_means))])
    pairs = np.triu_indices(est.n_vars, 1)
    write_csv(os.path.join(out, "correlations.csv"), ["i", "j", "value", "se"],
              [(i, j, v, s) for i, j, v, s in
               zip(pairs[0], pairs[1], est.correlations, est.se_correlations)])
    print(f"wrote {args.chains} samples after k={args.k} sweeps to {out}")
    return 0


def _cmd_spectrum(args) -> int:
    model = datasets.load_model(args.model)
    energy = meq.EnergyTable.from_couplings(model.j, model.h)
    if args.kernel == "discrete":
        op = meq.build_discrete_heatbath(energy)
    else:
        op = meq.build_continuous_glauber(energy)
    expansion = meq.spectral_expansion(op, meq.uniform_distribution(energy.space))
    kappa = meq.mixing_time(expansion)
    out = _out_dir(args.out)
    os.makedirs(out, exist_ok=True)
    meq.dump_spectrum_csv(expansion, os.path.join(out, "spectrum.csv"))
    meq.dump_operator_csv(op, os.path.join(out, "operator.csv"))
    shown = ", ".join(f"{v:.6g}" for v in expansion.eigenvalues[:8])
    print(f"eigenvalues: {shown}" + (" ..." if expansion.n_states > 8 else ""))
    print(f"kappa_mix = {kappa!r}")
    return 0


def _cmd_dataset_gen(args) -> int:
    out = _out_dir(args.out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    if args.kind == "ising2d":
        ds = datasets.generate_ising2d(args.L, args.beta, args.n,
                                       equil_sweeps=args.equil, gap_sweeps=args.gap,
                                       seed=args.seed)
        datasets.save_spin_dataset(ds, out)
        print(f"wrote {ds.n_samples} samples of {ds.n_vars} spins to {out}")
    else:
        spectrum = [float(v) for v in args.spectrum.split(",")]
        samples = datasets.generate_gaussian(np.array(spectrum), args.n, seed=args.seed)
        datasets.save_gaussian_dataset(samples, out, provenance={
            "generator": "gaussian-modes", "spectrum": spectrum,
            "n_samples": args.n, "seed": args.seed})
        print(f"wrote {args.n} samples of {len(spectrum)} modes to {out}")
    return 0


def _cmd_fixed_point(args) -> int:
    j_fixed = gaussian.fixed_point(args.c, args.m0, args.k)
    tau = gaussian.relaxation_time(args.c, args.m0, args.k)
    k_star = gaussian.divergence_threshold(args.c, args.m0)
    print(f"J_fixed = {j_fixed!r}")
    print(f"tau = {tau!r}")
    print(f"k_star = {k_star!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebmlab",
        description="Training and exact analysis of pairwise energy-based models "
                    "under non-convergent sampling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a declarative experiment config")
    p_run.add_argument("config", help="key = value config file")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument("--out", default=None, help="override config out_dir")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    p_run.set_defaults(fn=_cmd_run)

    p_train = sub.add_parser("train", help="train a model on a spin dataset")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--scheme", default="random-init",
                         choices=list(boltzmann.SCHEMES))
    p_train.add_argument("--k", type=int, default=5, help="sweeps per gradient estimate")
    p_train.add_argument("--gamma", type=float, default=1e-2)
    p_train.add_argument("--updates", type=int, default=1000)
    p_train.add_argument("--chains", type=int, default=2000)
    p_train.add_argument("--checkpoint-every", type=int, default=1000)
    p_train.add_argument("--seed", type=int, default=1234)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(fn=_cmd_train)

    p_sample = sub.add_parser("sample", help="draw finite-time samples from a model")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("--scheme", default="random-init",
                          choices=["random-init", "data-init"])
    p_sample.add_argument("--dataset", default=None, help="for data-init")
    p_sample.add_argument("--k", type=int, default=5)
    p_sample.add_argument("--chains", type=int, default=2000)
    p_sample.add_argument("--seed", type=int, default=1234)
    p_sample.add_argument("--out", required=True)
    p_sample.set_defaults(fn=_cmd_sample)

    p_spec = sub.add_parser("spectrum", help="spectral decomposition of a model's dynamics")
    p_spec.add_argument("--model", required=True)
    p_spec.add_argument("--kernel", default="discrete", choices=["discrete", "continuous"])
    p_spec.add_argument("--seed", type=int, default=1234)
    p_spec.add_argument("--out", required=True)
    p_spec.set_defaults(fn=_cmd_spectrum)

    p_ds = sub.add_parser("dataset", help="dataset utilities")
    ds_sub = p_ds.add_subparsers(dest="dataset_command", required=True)
    p_gen = ds_sub.add_parser("gen", help="generate a dataset")
    p_gen.add_argument("--kind", default="ising2d", choices=["ising2d", "gaussian"])
    p_gen.add_argument("--L", type=int, default=7)
    p_gen.add_argument("--beta", type=float, default=0.44)
    p_gen.add_argument("--n", type=int, default=10000)
    p_gen.add_argument("--equil", type=int, default=1000)
    p_gen.add_argument("--gap", type=int, default=10)
    p_gen.add_argument("--spectrum", default="1.0", help="gaussian mode eigenvalues")
    p_gen.add_argument("--seed", type=int, default=1234)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(fn=_cmd_dataset_gen)

    p_fp = sub.add_parser("fixed-point",
                          help="stationary coupling and relaxation time of the "
                               "finite-k training flow")
    p_fp.add_argument("--c", type=float, required=True, help="data spectral moment")
    p_fp.add_argument("--m0", type=float, required=True, help="initialization moment")
    p_fp.add_argument("--k", type=float, required=True, help="sampling time")
    p_fp.add_argument("--seed", type=int, default=1234)
    p_fp.add_argument("--out", default=None)
    p_fp.set_defaults(fn=_cmd_fixed_point)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except (ConfigError, ExperimentError, ValueError, FileNotFoundError) as exc:
        print(f"ebmlab: error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
