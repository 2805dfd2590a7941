"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_dataset_dir, majority_baseline, synth_generate, write_dataset
from .hor import HorConfig
from .hypergraph import structure_stats
from .model import SWEEP_GRID, HeIHNN, ModelConfig
from .propagation import StageConfig
from .reports import (format_history, format_report, read_manifest, read_snapshot, write_manifest,
                      write_snapshot, write_table_csv)
from .training import (TrainConfig, TrainingDiverged, evaluate, gradcheck_instance,
                       model_gradient_errors, pgd_perturb, run_once, sweep)

log = logging.getLogger("heihnn")

HOR_MODES = {
    "neither": (False, False),
    "s1": (True, False),
    "s3": (False, True),
    "both": (True, True),
}
ABLATION_ROWS = (("Neither", "neither"), ("Only-S1", "s1"), ("Only-S3", "s3"), ("Both", "both"))
GRADCHECK_TOL = 1e-4


class RunError(RuntimeError):
    pass


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset-dir", type=Path)
    g.add_argument("--synth", action="store_true", help="use the built-in synthetic benchmark")
    g.add_argument("--synth-outliers", type=float, default=0.0,
                   help="probability of injecting a cross-class member into each synthetic hyperedge")
    g.add_argument("--hops", type=int, default=1, help="neighborhood radius when building from edges.txt")
    g.add_argument("--knn", type=int, default=None, help="build a k-nearest-neighbor hypergraph from features")

    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--hidden", type=int, default=64)
    g.add_argument("--att-width", type=int, default=64)
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--hor", choices=sorted(HOR_MODES), default="neither")
    g.add_argument("--hor-tau", type=float, default=0.0)
    g.add_argument("--hor-min-keep", type=int, default=1)
    g.add_argument("--no-hor-renormalize", action="store_true")
    g.add_argument("--chebyshev-k", type=int, default=0)
    g.add_argument("--attention", choices=("on", "off"), default="on")
    g.add_argument("--normalization", choices=("interaction", "paper-literal"), default="interaction")
    g.add_argument("--activation", choices=("relu", "tanh", "identity"), default="relu")
    g.add_argument("--dropout", type=float, default=0.5)

    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=0.001)
    g.add_argument("--weight-decay", type=float, default=0.0005)
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--patience", type=int, default=None)
    g.add_argument("--repeats", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1)

    g = p.add_argument_group("output")
    g.add_argument("--out-dir", type=Path, default=Path("runs"))
    g.add_argument("--no-plot", action="store_true", help="skip the PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heihnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"heihnn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train --repeats models and report mean +/- std accuracy")
    _common(p)
    p.set_defaults(func=cmd_train, needs_data=True)

    p = sub.add_parser("ablate-hor", help="compare outlier removal in neither/one/both stages")
    _common(p)
    p.set_defaults(func=cmd_ablate_hor, needs_data=True)

    p = sub.add_parser("sweep", help="alpha x beta accuracy grid")
    _common(p)
    p.add_argument("--grid", type=float, nargs="+", default=list(SWEEP_GRID),
                   help="values used for both alpha and beta")
    p.set_defaults(func=cmd_sweep, needs_data=True, repeats=1)

    p = sub.add_parser("perturb", help="PGD feature perturbation of the test nodes")
    _common(p)
    p.add_argument("--snapshot", type=Path, help="parameter snapshot from a previous train run")
    p.add_argument("--train-first", action="store_true")
    p.add_argument("--eps", type=float, default=0.002)
    p.add_argument("--pgd-steps", type=int, default=10)
    p.add_argument("--step-size", type=float, default=None, help="default eps/4")
    p.set_defaults(func=cmd_perturb, needs_data=True, repeats=1)

    p = sub.add_parser("gradcheck", help="finite-difference check of every model parameter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-fd", type=float, default=1e-5)
    p.add_argument("--out-dir", type=Path, default=Path("runs"))
    p.set_defaults(func=cmd_gradcheck, needs_data=False)

    p = sub.add_parser("synth", help="write the synthetic benchmark to a dataset directory")
    p.add_argument("directory", type=Path)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--nodes-per-class", type=int, default=50)
    p.add_argument("--edge-size", type=int, default=6)
    p.add_argument("--hyperedges", type=int, default=120)
    p.add_argument("--homophily", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--outliers", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth, needs_data=False)

    p = sub.add_parser("stats", help="print |V|, |E|, max|e| of a dataset")
    p.add_argument("--dataset-dir", type=Path)
    p.add_argument("--synth", action="store_true")
    p.add_argument("--synth-outliers", type=float, default=0.0)
    p.add_argument("--hops", type=int, default=1)
    p.add_argument("--knn", type=int, default=None)
    p.set_defaults(func=cmd_stats, needs_data=True, seed=0)

    p = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out-dir", type=Path, default=None)
    p.set_defaults(func=cmd_rerun, needs_data=False)
    return parser


# ---------------------------------------------------------------- config plumbing


def model_config(args) -> ModelConfig:
    s1, s3 = HOR_MODES[args.hor]
    stage = StageConfig(
        use_attention=args.attention == "on",
        hor_n2he=s1,
        hor_he2n=s3,
        chebyshev_k=args.chebyshev_k,
        activation=args.activation,
        normalization=args.normalization,
    )
    hor = HorConfig(tau=args.hor_tau, min_keep=args.hor_min_keep,
                    renormalize=not args.no_hor_renormalize)
    return ModelConfig(layers=args.layers, hidden=args.hidden, att_width=args.att_width,
                       alpha=args.alpha, beta=args.beta, stage=stage, hor=hor,
                       dropout=args.dropout, seed=args.seed)


def train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, weight_decay=args.weight_decay, epochs=args.epochs,
                       patience=args.patience, optimizer=args.optimizer)


def load_data(args):
    if args.synth:
        return synth_generate(outlier_rate=args.synth_outliers)
    return load_dataset_dir(args.dataset_dir, split_seed=args.seed, hops=args.hops, knn=args.knn)


def _args_record(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k in ("func", "needs_data"):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def write_run_manifest(args, out_dir: Path, mcfg=None, tcfg=None) -> None:
    manifest = {
        "tool": "heihnn",
        "version": __version__,
        "command": args.command,
        "args": _args_record(args),
        "seed": getattr(args, "seed", None),
        "dataset": "synth" if getattr(args, "synth", False) else str(getattr(args, "dataset_dir", None)),
    }
    if mcfg is not None:
        manifest["model_config"] = asdict(mcfg)
    if tcfg is not None:
        manifest["train_config"] = asdict(tcfg)
    write_manifest(manifest, out_dir / "manifest.json")


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _repeat_runs(mcfg, tcfg, ds, seeds):
    runs = []
    for s in seeds:
        model, split, hist = run_once(mcfg, tcfg, ds, s)
        runs.append((s, model, split, hist, evaluate(model, split, split.test_idx)))
    return runs


def _pm(accs) -> str:
    accs = 100 * np.asarray(accs)
    return f"{accs.mean():.2f}±{accs.std():.2f}"


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    ds = load_data(args)
    mcfg, tcfg = model_config(args), train_config(args)
    out = _out_dir(args)
    seeds = [args.seed + r for r in range(args.repeats)]
    runs = _repeat_runs(mcfg, tcfg, ds, seeds)
    accs = [r[4] for r in runs]
    for s, model, _, hist, _ in runs:
        (out / f"history_seed{s}.csv").write_text(format_history(hist), encoding="utf-8")
        write_snapshot(hist.params, out / f"snapshot_seed{s}.heih")
    metrics = {
        "runs": len(accs),
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "majority_baseline": float(majority_baseline(ds.labels)),
        **{f"accuracy_seed{s}": a for s, a in zip(seeds, accs)},
    }
    (out / "metrics.txt").write_text(format_report(metrics), encoding="utf-8")
    write_table_csv(["seed", "test_accuracy"], zip(seeds, accs), out / "accuracy.csv")
    write_run_manifest(args, out, mcfg, tcfg)
    if not args.no_plot:
        from .plotting import plot_history
        plot_history(runs[0][3].records, out / f"history_seed{seeds[0]}.png")
    print(f"{'model':<10}accuracy (%)")
    print(f"{'HeIHNN':<10}{_pm(accs)}   ({len(accs)} runs, majority baseline "
          f"{100 * metrics['majority_baseline']:.2f})")
    return 0


def cmd_ablate_hor(args) -> int:
    ds = load_data(args)
    tcfg = train_config(args)
    out = _out_dir(args)
    seeds = [args.seed + r for r in range(args.repeats)]
    rows = []
    for label, mode in ABLATION_ROWS:
        args_mode = argparse.Namespace(**{**vars(args), "hor": mode})
        runs = _repeat_runs(model_config(args_mode), tcfg, ds, seeds)
        accs = [r[4] for r in runs]
        rows.append((label, float(np.mean(accs)), float(np.std(accs)), accs))
    write_table_csv(["mode", "accuracy_mean", "accuracy_std"],
                    [(r[0], repr(r[1]), repr(r[2])) for r in rows], out / "ablation.csv")
    (out / "metrics.txt").write_text(
        format_report({f"{r[0]}": f"{r[1]!r},{r[2]!r}" for r in rows}), encoding="utf-8")
    write_run_manifest(args, out, model_config(args), tcfg)
    if not args.no_plot:
        from .plotting import plot_ablation
        plot_ablation(rows, out / "ablation.png")
    print(f"{'':<10}accuracy (%)")
    for label, _, _, accs in rows:
        print(f"{label:<10}{_pm(accs)}")
    return 0


def cmd_sweep(args) -> int:
    ds = load_data(args)
    mcfg, tcfg = model_config(args), train_config(args)
    out = _out_dir(args)
    result = sweep(mcfg, tcfg, ds, args.grid, args.grid, repeats=args.repeats, seed=args.seed,
                   jobs=args.jobs)
    write_table_csv(["alpha", "beta", "accuracy_mean", "accuracy_std"],
                    [(a, b, repr(m), repr(s)) for a, b, m, s in result.rows()], out / "sweep.csv")
    a, b, best = result.best
    (out / "metrics.txt").write_text(
        format_report({"best_alpha": a, "best_beta": b, "best_accuracy": best}), encoding="utf-8")
    write_run_manifest(args, out, mcfg, tcfg)
    if not args.no_plot:
        from .plotting import plot_sweep
        plot_sweep(result, out / "sweep.png")
    print("alpha\\beta " + " ".join(f"{x:>6.1f}" for x in result.betas))
    for i, al in enumerate(result.alphas):
        print(f"{al:>10.1f} " + " ".join(f"{100 * v:>6.2f}" for v in result.acc[i]))
    print(f"best: alpha={a} beta={b} accuracy={100 * best:.2f}")
    return 0


def cmd_perturb(args) -> int:
    ds = load_data(args)
    mcfg, tcfg = model_config(args), train_config(args)
    out = _out_dir(args)
    if args.snapshot is not None:
        if not args.snapshot.exists():
            raise RunError(f"snapshot {args.snapshot} not found")
        split = ds.resplit(args.seed)
        model = HeIHNN(mcfg, split.features.shape[1], split.n_classes)
        model.load(read_snapshot(args.snapshot))
    elif args.train_first:
        model, split, _ = run_once(mcfg, tcfg, ds, args.seed)
    else:
        raise RunError("perturb needs --snapshot or --train-first")
    clean = evaluate(model, split, split.test_idx)
    xp = pgd_perturb(model, split, args.eps, args.pgd_steps, args.step_size)
    pt = evaluate(model, split, split.test_idx, features=xp)
    metrics = {
        "eps": args.eps,
        "clean_acc": 100 * clean,
        "ptAcc": 100 * pt,
        "Dec": 100 * clean - 100 * pt,
        "max_abs_change": float(np.abs(xp - split.features).max()),
    }
    (out / "metrics.txt").write_text(format_report(metrics), encoding="utf-8")
    write_table_csv(["eps", "clean_acc", "ptAcc", "Dec"],
                    [(args.eps, metrics["clean_acc"], metrics["ptAcc"], metrics["Dec"])],
                    out / "perturb.csv")
    write_run_manifest(args, out, mcfg, tcfg)
    if not args.no_plot:
        from .plotting import plot_perturbation
        plot_perturbation(clean, pt, out / "perturb.png")
    print(f"{'model':<10}{'clean':>8}{'ptAcc':>8}{'Dec':>8}")
    print(f"{'HeIHNN':<10}{metrics['clean_acc']:>8.2f}{metrics['ptAcc']:>8.2f}{metrics['Dec']:>8.2f}")
    return 0


def gradcheck_errors(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    ds = gradcheck_instance(seed)
    cfg = ModelConfig(layers=2, hidden=4, att_width=3, dropout=0.0, seed=seed)
    model = HeIHNN(cfg, ds.features.shape[1], ds.n_classes)
    return model_gradient_errors(model, ds, eps)


def cmd_gradcheck(args) -> int:
    errors = gradcheck_errors(args.seed, args.eps_fd)
    width = max(map(len, errors))
    for name, err in errors.items():
        flag = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    worst = max(errors, key=errors.get)
    print(f"worst: {worst} {errors[worst]:.3e} (tolerance {GRADCHECK_TOL:g})")
    out = _out_dir(args)
    (out / "gradcheck.txt").write_text(format_report(errors), encoding="utf-8")
    write_run_manifest(args, out)
    return 0 if errors[worst] < GRADCHECK_TOL else 1


def cmd_synth(args) -> int:
    ds = synth_generate(args.classes, args.nodes_per_class, args.edge_size, args.homophily,
                        args.noise, args.seed, args.hyperedges, outlier_rate=args.outliers)
    d = write_dataset(ds, args.directory)
    s = structure_stats(ds.hypergraph)
    print(f"wrote {d}: |V|={s['n']} |E|={s['m']} max|e|={s['max_e']}")
    return 0


def cmd_stats(args) -> int:
    ds = load_data(args)
    s = structure_stats(ds.hypergraph)
    print(f"|V|={s['n']} |E|={s['m']} max|e|={s['max_e']} features={ds.features.shape[1]} "
          f"classes={ds.n_classes}")
    return 0


def cmd_rerun(args) -> int:
    manifest = read_manifest(args.manifest)
    stored = dict(manifest["args"])
    if args.out_dir is not None:
        stored["out_dir"] = str(args.out_dir)
    argv = [stored.pop("command")]
    parser = build_parser()
    ns = parser.parse_args(argv + _required_positionals(stored))
    for k, v in stored.items():
        if k in ("dataset_dir", "out_dir", "snapshot", "directory") and v not in (None, "None"):
            v = Path(v)
        setattr(ns, k, v)
    return _dispatch(ns)


def _required_positionals(stored: dict) -> list[str]:
    return [str(stored["directory"])] if "directory" in stored else []


# ---------------------------------------------------------------- entry


def _dispatch(args) -> int:
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RunError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.needs_data and not args.synth and args.dataset_dir is None:
        parser.error("give --dataset-dir or --synth")
    if getattr(args, "eps", 0.0) < 0:
        parser.error("--eps must be nonnegative")
    if getattr(args, "repeats", 1) < 1:
        parser.error("--repeats must be >= 1")
    return _dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
