"""``symlab`` command line: dataset generation, training, certification and evaluation.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error. Every
command writes a JSON echo of its arguments next to its main output so a run
can be replayed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from .action_learner import ActionConfig, as_latent_action, prediction_mse, train_action_mlp, wrap_accuracy
from .analytic import AnalyticLSB, ideal_matrices
from .groups import (
    WorldAction,
    count_permuted_worlds,
    disentanglement_check,
    enumerate_permuted_worlds,
    equivariance_witness,
    linear_collapse_probe,
    same_still_images,
)
from .models import (
    TrainingConfig,
    encode_states,
    load_checkpoint,
    save_checkpoint,
    train_autoencoder,
    train_cci_vae,
    train_forward_vae,
    write_history,
)
from .world import DatasetFormatError, WorldSpec, load_dataset, random_walk, save_dataset

log = logging.getLogger("symlab")

DEFAULT_EPOCHS = {"forward-vae": 35, "cci-vae": 11, "ae": 11}
PROTOCOL_Z_DIMS = {"cci-vae": (2, 4), "ae": (2,), "forward-vae": (4,)}
BENCHMARK_MODELS = ("forward-vae", "cci-vae-2", "ae", "cci-vae-4")


class UsageError(Exception):
    """Bad arguments detected after parsing; maps to exit code 2."""


# --- argument helpers -----------------------------------------------------------------


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def int_list(text: str) -> list[int]:
    """``1000,10000`` or a range ``1:10`` (inclusive)."""
    try:
        if ":" in text:
            lo, hi = (int(t) for t in text.split(":"))
            values = list(range(lo, hi + 1))
        else:
            values = [int(t) for t in text.split(",") if t]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cannot parse integer list {text!r}") from exc
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError(f"empty or negative list {text!r}")
    return values


def model_list(text: str) -> dict[str, str]:
    """``name=path,name=path``."""
    out = {}
    for item in text.split(","):
        name, sep, path = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=path, got {item!r}")
        out[name] = path
    return out


def _echo(path: Path, args: argparse.Namespace, **extra) -> None:
    record = {k: v for k, v in vars(args).items() if k != "func"}
    record.update(version=__version__, **extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


def _echo_beside(out: Path, args, **extra) -> None:
    _echo(out.with_name(out.name + ".run.json"), args, **extra)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# --- commands -------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = WorldSpec(args.n, args.image_size, args.radius)
    data = random_walk(spec, args.steps, args.seed)
    out = Path(args.out)
    save_dataset(data, out)
    _echo_beside(out, args, sha256=file_digest(out))
    counts = np.bincount(data.actions, minlength=4)
    print(f"wrote {len(data)} transitions to {out} (N={spec.n}, B={spec.image_size}, actions {counts.tolist()})")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(_require(args.data, "dataset"))
    epochs = DEFAULT_EPOCHS[args.model] if args.epochs is None else args.epochs
    z_dim = args.z_dim if args.z_dim is not None else (4 if args.model == "forward-vae" else 2)
    if args.model == "forward-vae" and z_dim != 4:
        raise UsageError("the Forward-VAE latent space is 4-dimensional")
    off_protocol = z_dim not in PROTOCOL_Z_DIMS[args.model]
    if off_protocol:
        print(f"warning: --z-dim {z_dim} is off-protocol for {args.model} (exploration only)")
    config = TrainingConfig(epochs=epochs, batch_size=args.batch_size, seed=args.seed)
    start = time.perf_counter()
    if args.model == "forward-vae":
        ckpt = train_forward_vae(data, config)
    elif args.model == "cci-vae":
        ckpt = train_cci_vae(data, config, z_dim=z_dim)
    else:
        ckpt = train_autoencoder(data, config, z_dim=z_dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    write_history(ckpt.history, out.with_suffix(".csv"))
    _echo_beside(out, args, epochs_used=epochs, z_dim_used=z_dim, off_protocol=off_protocol)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"{args.model}: {len(ckpt.history)} steps in {time.perf_counter() - start:.1f}s, final losses {last}")
    return 0


def cmd_learn_action(args) -> int:
    repr_path = _require(args.repr, "representation checkpoint")
    before = file_digest(repr_path)
    rep = load_checkpoint(repr_path)
    data = load_dataset(_require(args.data, "dataset"))
    table = encode_states(rep)
    ckpt = train_action_mlp(table, data, ActionConfig(epochs=args.epochs, seed=args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    if file_digest(repr_path) != before:
        raise RuntimeError("representation checkpoint changed during action learning")
    mse = prediction_mse(ckpt, table, data)
    acc = wrap_accuracy(ckpt, table, data.spec)
    _echo_beside(out, args, prediction_mse=mse, wrap_accuracy=acc)
    print(f"prediction MSE {mse:.6g}, wrap-around accuracy {acc:.4f}")
    return 0


def _representation(args):
    """(table, latent action, split, label) selected by --repr/--action."""
    if args.repr == "analytic":
        lsb = AnalyticLSB(args.n)
        table, split = lsb.table(), [[0, 1], [2, 3]]
        default_action = lsb.latent_action()
    else:
        ckpt = load_checkpoint(_require(args.repr, "representation checkpoint"))
        table = encode_states(ckpt)
        split = [[0, 1], [2, 3]] if ckpt.kind == "forward-vae" else [[i] for i in range(table.dim)]
        default_action = ckpt.latent_action() if ckpt.kind == "forward-vae" else None
    if args.action is None:
        latent = default_action
    elif args.action == "ideal":
        latent = AnalyticLSB(table.n).latent_action()
    else:
        act = load_checkpoint(_require(args.action, "action checkpoint"))
        if act.z_dim != table.dim:
            raise UsageError(f"action model works on {act.z_dim}-d latents, representation is {table.dim}-d")
        latent = as_latent_action(act)
    if latent is None:
        raise UsageError("this representation carries no latent action; pass --action")
    return table, latent, split


def cmd_verify_sb(args) -> int:
    table, latent, split = _representation(args)
    world = WorldAction.canonical(table.n)
    residual, state, move = equivariance_witness(table, world, latent)
    violations = disentanglement_check(table, latent, split)
    print(f"equivariance residual {residual:.3e} (worst at state {tuple(state)}, {move.name})")
    for i, v in enumerate(violations):
        print(f"subspace {i}: disentanglement violation {v:.3e}")
    ok = residual <= args.tol and max(violations) <= args.tol
    print("PASS" if ok else "FAIL")
    if args.out:
        _echo(Path(args.out), args, residual=residual, violations=violations, passed=ok)
    return 0 if ok else 1


def theorem_report(n: int = 3, worlds: int = 3, probe_n: int = 4, resolution: float = 0.05) -> dict:
    """Permuted-world counting and witnesses plus the linear-collapse probe; ``report["passed"]`` is the verdict."""
    spec = WorldSpec(n, 32, 4.0)
    canonical = WorldAction.canonical(n)
    analytic = AnalyticLSB(n)
    table, latent = analytic.table(), analytic.latent_action()
    permuted = []
    for world in enumerate_permuted_worlds(n, limit=worlds):
        residual, state, move = equivariance_witness(table, world, latent)
        permuted.append(
            {
                "perm_x": list(world.perm_x),
                "perm_y": list(world.perm_y),
                "same_images": same_still_images(canonical, world, spec),
                "residual": residual,
                "witness": [int(state[0]), int(state[1]), move.name],
            }
        )
    probe = linear_collapse_probe(probe_n, resolution=resolution)
    report = {
        "k_WG": count_permuted_worlds(n, 2),
        "expected_k_WG": 2 * int(np.prod(np.arange(1, n + 1))) - 1,
        "permuted_worlds": permuted,
        "probe_best_residual": probe.best_nonconstant_residual,
        "probe_threshold": probe.threshold,
        "probe_configurations": probe.configurations,
        "probe_counterexamples": len(probe.counterexamples),
    }
    report["passed"] = bool(
        report["k_WG"] == report["expected_k_WG"]
        and len(permuted) >= worlds
        and all(w["same_images"] and w["residual"] > 0.5 for w in permuted)
        and not probe.counterexamples
    )
    return report


def cmd_verify_theorems(args) -> int:
    start = time.perf_counter()
    report = theorem_report(args.n, args.worlds, args.probe_n, args.resolution)
    print(f"k_{{W,G}}={report['k_WG']} (n*N! - 1 with n=2, N={args.n})")
    for w in report["permuted_worlds"]:
        x, y, move = w["witness"]
        print(
            f"world perm_x={w['perm_x']} perm_y={w['perm_y']}: same still images {w['same_images']}, "
            f"canonical representation fails at state ({x}, {y}) under {move} with residual {w['residual']:.3f}"
        )
    print(
        f"linear-collapse probe (N={args.probe_n}): best non-escape residual {report['probe_best_residual']:.3f} "
        f"over {report['probe_configurations']} configurations, {report['probe_counterexamples']} below "
        f"{report['probe_threshold']}"
    )
    print(f"{'PASS' if report['passed'] else 'FAIL'} in {time.perf_counter() - start:.2f}s")
    if args.out:
        _echo(Path(args.out), args, report=report)
    return 0 if report["passed"] else 1


def cmd_eval_inverse(args) -> int:
    data = load_dataset(_require(args.data, "dataset"))
    tables = {"analytic": AnalyticLSB(data.spec.n).table()} if args.analytic else {}
    for name, path in args.models.items():
        tables[name] = encode_states(load_checkpoint(_require(path, f"checkpoint {name!r}")))
    if not tables:
        raise UsageError("no representations given (use --models or --analytic)")
    results = ev.inverse_model_benchmark(
        tables,
        data,
        sizes=args.sizes,
        depths=args.depths,
        folds=args.folds,
        trees=args.trees,
        seed=args.seed,
        shuffle_labels=args.shuffle_labels,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.write_benchmark(results, out)
    _echo_beside(out, args)
    top = max(args.depths)
    for name in tables:
        scores = ", ".join(
            f"{size}: {ev.lookup_result(results, name, size, top).mean_accuracy:.4f}" for size in args.sizes
        )
        print(f"{name} at depth {top}: {scores}")
    return 0


def _forward_vae(path):
    ckpt = load_checkpoint(_require(path, "Forward-VAE checkpoint"))
    if ckpt.kind != "forward-vae":
        raise UsageError(f"expected a forward-vae checkpoint, got {ckpt.kind}")
    return ckpt


def cmd_eval_matrices(args) -> int:
    ckpt = _forward_vae(args.model)
    report = ev.analyze_matrices(ckpt.action_matrices(), ckpt.spec.n)
    for r in report.rows:
        print(
            f"{r.action:5s} block {r.block}: angle {r.angle:+.4f} (first column {r.first_column_angle:+.4f}, "
            f"ideal {r.ideal_angle:+.4f}), mse {r.mse:.3e}, det {r.det:.4f}"
        )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        ev.write_matrix_report(report, out)
        _echo_beside(out, args)
    return 0


def cmd_eval_drift(args) -> int:
    curves = {}
    n = args.n
    if args.model:
        ckpt = _forward_vae(args.model)
        n = ckpt.spec.n
        for a, m in ckpt.action_matrices().items():
            curves[f"learned_{a.name.lower()}"] = ev.determinant_drift(m, args.max_k)
    for a, m in ideal_matrices(n).items():
        curves[f"ideal_{a.name.lower()}"] = ev.determinant_drift(m, args.max_k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.write_drift(curves, out)
    _echo_beside(out, args)
    for name, c in curves.items():
        print(f"{name}: det^1 {c.det[0]:.6f}, det^{args.max_k} {c.det[-1]:.6g}")
    return 0


def cmd_eval_traverse(args) -> int:
    ckpt = load_checkpoint(_require(args.model, "checkpoint"))
    indices = range(2) if ckpt.kind == "forward-vae" else range(ckpt.z_dim)
    rows = [ev.latent_traversal(ckpt, i, args.steps) for i in indices]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.write_pgm(np.concatenate(rows), out, columns=args.steps)
    _echo_beside(out, args)
    for i, frames in zip(indices, rows):
        dx, dy = ev.centroid_displacement(frames)
        print(f"traversal {i}: centroid travel x {dx:.2f}px, y {dy:.2f}px")
    return 0


def cmd_reproduce_all(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "data.sbdt"
    steps = [
        ["gen", "--n", str(args.n), "--steps", str(args.steps), "--seed", str(args.data_seed), "--out", str(data_path)],
        ["train", "forward-vae", "--data", str(data_path), "--seed", str(args.seed), "--out", str(out / "forward-vae.sbmc")],
        ["train", "cci-vae", "--data", str(data_path), "--z-dim", "2", "--seed", str(args.seed), "--out", str(out / "cci-vae-2.sbmc")],
        ["train", "cci-vae", "--data", str(data_path), "--z-dim", "4", "--seed", str(args.seed), "--out", str(out / "cci-vae-4.sbmc")],
        ["train", "ae", "--data", str(data_path), "--seed", str(args.seed), "--out", str(out / "ae.sbmc")],
        ["learn-action", "--repr", str(out / "cci-vae-2.sbmc"), "--data", str(data_path), "--seed", str(args.seed), "--out", str(out / "action-mlp.sbmc")],
        ["verify", "sb", "--repr", "analytic", "--n", str(args.n), "--out", str(out / "verify-sb.json")],
        ["verify", "theorems", "--n", "3", "--out", str(out / "verify-theorems.json")],
        ["eval", "matrices", "--model", str(out / "forward-vae.sbmc"), "--out", str(out / "matrices.csv")],
        ["eval", "drift", "--model", str(out / "forward-vae.sbmc"), "--max-k", "10000", "--out", str(out / "drift.csv")],
        ["eval", "traverse", "--model", str(out / "forward-vae.sbmc"), "--out", str(out / "traverse-forward-vae.pgm")],
        ["eval", "traverse", "--model", str(out / "cci-vae-2.sbmc"), "--out", str(out / "traverse-cci-vae-2.pgm")],
        [
            "eval", "inverse", "--data", str(data_path), "--seed", str(args.seed), "--out", str(out / "inverse.csv"),
            "--models", ",".join(f"{m}={out / (m + '.sbmc')}" for m in BENCHMARK_MODELS),
        ],
    ]
    _echo(out / "run.json", args, commands=steps)
    status = 0
    for argv in steps:
        print("$ symlab " + " ".join(argv))
        code = main(argv)
        if code == 2:
            return code
        status = status or code
    return status


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random-walk transition dataset")
    g.add_argument("--n", type=positive_int, default=10)
    g.add_argument("--image-size", type=positive_int, default=32)
    g.add_argument("--radius", type=float, default=4.0)
    g.add_argument("--steps", type=positive_int, default=15000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a representation model")
    t.add_argument("model", choices=sorted(DEFAULT_EPOCHS))
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=None, help="default: 35 for forward-vae, 11 otherwise")
    t.add_argument("--z-dim", type=positive_int, default=None)
    t.add_argument("--batch-size", type=positive_int, default=128)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    la = sub.add_parser("learn-action", help="learn the latent group action on a frozen representation")
    la.add_argument("--repr", required=True)
    la.add_argument("--data", required=True)
    la.add_argument("--epochs", type=positive_int, default=ActionConfig.epochs)
    la.add_argument("--seed", type=int, default=0)
    la.add_argument("--out", required=True)
    la.set_defaults(func=cmd_learn_action)

    v = sub.add_parser("verify", help="certify representations and run the theorem demonstrations")
    vsub = v.add_subparsers(dest="target", required=True)
    vs = vsub.add_parser("sb", help="equivariance and disentanglement of a representation")
    vs.add_argument("--repr", default="analytic", help="checkpoint path or 'analytic'")
    vs.add_argument("--action", default=None, help="action-mlp checkpoint or 'ideal'")
    vs.add_argument("--n", type=positive_int, default=10)
    vs.add_argument("--tol", type=float, default=1e-9)
    vs.add_argument("--out", default=None)
    vs.set_defaults(func=cmd_verify_sb)
    vt = vsub.add_parser("theorems", help="permuted-world theorem and linear-collapse probe")
    vt.add_argument("--n", type=positive_int, default=3)
    vt.add_argument("--worlds", type=positive_int, default=3)
    vt.add_argument("--probe-n", type=positive_int, default=4)
    vt.add_argument("--resolution", type=float, default=0.05)
    vt.add_argument("--out", default=None)
    vt.set_defaults(func=cmd_verify_theorems)

    e = sub.add_parser("eval", help="quantitative analyses")
    esub = e.add_subparsers(dest="analysis", required=True)
    ei = esub.add_parser("inverse", help="inverse-model benchmark with a random forest")
    ei.add_argument("--data", required=True)
    ei.add_argument("--models", type=model_list, default={}, help="name=checkpoint,...")
    ei.add_argument("--analytic", action="store_true", help="include the analytic representation")
    ei.add_argument("--sizes", type=int_list, default=[1000, 10000])
    ei.add_argument("--depths", type=int_list, default=list(range(1, 11)))
    ei.add_argument("--folds", type=positive_int, default=10)
    ei.add_argument("--trees", type=positive_int, default=100)
    ei.add_argument("--seed", type=int, default=0)
    ei.add_argument("--shuffle-labels", action="store_true")
    ei.add_argument("--out", required=True)
    ei.set_defaults(func=cmd_eval_inverse)
    em = esub.add_parser("matrices", help="learned vs ideal action matrices")
    em.add_argument("--model", required=True)
    em.add_argument("--out", default=None)
    em.set_defaults(func=cmd_eval_matrices)
    ed = esub.add_parser("drift", help="determinant under repeated composition")
    ed.add_argument("--model", default=None, help="Forward-VAE checkpoint (ideal curves always included)")
    ed.add_argument("--n", type=positive_int, default=10)
    ed.add_argument("--max-k", type=positive_int, default=1000)
    ed.add_argument("--out", required=True)
    ed.set_defaults(func=cmd_eval_drift)
    et = esub.add_parser("traverse", help="decoded latent traversals as a PGM grid")
    et.add_argument("--model", required=True)
    et.add_argument("--steps", type=positive_int, default=9)
    et.add_argument("--out", required=True)
    et.set_defaults(func=cmd_eval_traverse)

    r = sub.add_parser("reproduce-all", help="regenerate every artifact in one run")
    r.add_argument("--out", required=True)
    r.add_argument("--n", type=positive_int, default=10)
    r.add_argument("--steps", type=positive_int, default=15000)
    r.add_argument("--data-seed", type=int, default=7)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_reproduce_all)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DatasetFormatError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
