"""``seqsparse`` command line: data generation, training, evaluation, solving, bounds and gradient checks."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bounds as bnd
from . import data
from .core import DimensionError
from .model import Variant, forward_frames, init_dictionary, init_params, load_checkpoint, save_checkpoint
from .solvers import algorithm1, fista, ista, lasso_objective, lipschitz, objective_eq4
from .train import (TrainConfig, finite_diff_check, search_lambdas, tiny_instance, train_loop,
                    write_history)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

EVAL_COLUMNS = ("sequence", "psnr", "mse")
SOLVE_COLUMNS = ("sequence", "psnr", "mse", "objective")
GRADCHECK_COLUMNS = ("model", "passed", "max_error", "checked", "skipped")

log = logging.getLogger("seqsparse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])
    return buf.getvalue()


def _emit(text: str, out: Path | None, default_name: str | None = None) -> None:
    """Write ``text`` to ``out`` (a file, or a directory plus ``default_name``) and stdout."""
    if out is not None:
        target = out / default_name if (default_name and (out.is_dir() or not out.suffix)) else out
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    sys.stdout.write(text)


def _table(args, columns, rows, summary: dict | None, name: str) -> None:
    if args.format == "json":
        payload = {"columns": list(columns), "rows": rows}
        if summary is not None:
            payload["summary"] = summary
        _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out, name + ".json")
    else:
        _emit(_rows_csv(columns, rows), args.out, name + ".csv")
        if summary is not None:
            print(" ".join(f"{k}={v!r}" for k, v in summary.items()), file=sys.stderr)


def _load_dataset(path) -> data.Dataset:
    ds = data.load_dataset(path)
    if not ds.splits:
        data.split(ds)
    return ds


def _parse_T(values) -> list[int]:
    """Accept ``8``, ``1..64`` (powers of two when both ends are) or several values."""
    out: list[int] = []
    for v in values:
        for part in str(v).split(","):
            if ".." in part:
                lo, hi = (int(x) for x in part.split(".."))
                if lo < 1 or hi < lo:
                    raise UsageError(f"bad T range {part!r}")
                out.extend(range(lo, hi + 1))
            elif part:
                out.append(int(part))
    if any(t < 1 for t in out):
        raise UsageError("T must be >= 1")
    return out


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.kind == "synthetic-sparse":
        h = args.hidden or 2 * args.n0
        ds = data.gen_synthetic_sparse(args.count, args.T, args.n0, h, args.k, args.seed)
    elif args.kind == "moving-square":
        side = args.side or math.isqrt(args.n0)
        square = args.square or max(1, side // 4)
        ds = data.gen_moving_square(args.count, args.T, side, square, args.seed)
    else:
        if not args.idx:
            raise UsageError("idx-import requires --idx PATH")
        ds = data.dataset_from_idx(args.idx, args.T, args.side or 16, args.seed)
    data.split(ds, seed=args.seed)
    out = args.out or Path("dataset.json")
    if out.is_dir() or not out.suffix:
        out = out / "dataset.json"
    data.save_dataset(ds, out)
    sys.stdout.write(out.read_text())
    return EXIT_OK


def _variant(name: str) -> Variant:
    try:
        return Variant(name)
    except ValueError:
        raise UsageError(f"unknown model {name!r}; choose from {[v.value for v in Variant]}") from None


def cmd_train(args) -> int:
    variant = _variant(args.model)
    ds = _load_dataset(args.dataset)
    n = int(round(args.cs_rate * ds.n0))
    if n < 1:
        raise UsageError(f"cs-rate {args.cs_rate} leaves no measurements for n0={ds.n0}")
    p = init_params(variant, ds.n0, n, args.hidden, args.depth, args.seed, args.lambda1, args.lambda2)
    tr, va = ds.subset("train"), ds.subset("val")
    if len(va) == 0:
        va = tr
    p = search_lambdas(p, va, args.lambda_trials, args.seed)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.clip, args.patience, args.factor,
                      args.seed, args.freeze_A)
    res = train_loop(p, tr, va, cfg)
    out = args.out or Path("run")
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(res.params, out / "checkpoint.json", epoch=cfg.epochs, seed=args.seed,
                           extra={"dataset": str(args.dataset), "cs_rate": args.cs_rate})
    hist = write_history(res.history, out / "history.csv")
    last = res.history[-1]
    print(json.dumps({"checkpoint": str(ckpt), "history": str(hist), "final_train_mse": last.train_mse,
                      "final_val_mse": last.val_mse}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    p, _ = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    if ds.n0 != p.n0:
        raise DimensionError("eval", f"frame length n0 = {p.n0}", ds.n0)
    idx = ds.splits[args.split]
    frames = ds.frames[idx]
    rows = []
    if len(frames):
        rec = forward_frames(p, frames).reconstructions()
        for i, s, s_hat in zip(idx, frames, rec):
            rows.append({"sequence": int(i), "psnr": data.psnr(s, s_hat),
                         "mse": float(np.mean((s - s_hat) ** 2))})
    summary = {"mean_psnr": float(np.mean([r["psnr"] for r in rows])) if rows else None,
               "mean_mse": float(np.mean([r["mse"] for r in rows])) if rows else None,
               "count": len(rows)}
    _table(args, EVAL_COLUMNS, rows, summary, "eval")
    return EXIT_OK


def solve_sequence(algo: str, frames, A, D, lambda1: float, lambda2: float, iters: int, c: float):
    """Reconstruct one sequence ``(T, n0)``; returns ``(s_hat, objective)``."""
    x = data.sense(A, frames)
    hdim = D.shape[1]
    if algo == "alg1":
        eye = np.eye(hdim)
        ones = np.ones(hdim)
        codes = algorithm1(x, A, D, eye, [eye] * iters, [ones] * iters, c, lambda1, lambda2,
                           np.zeros(hdim), iters)[:, -1]
        prev = np.vstack([np.zeros(hdim), codes[:-1]])
        obj = sum(objective_eq4(codes[t], x[t], prev[t], A, D, eye, eye, ones, lambda1, lambda2)
                  for t in range(len(x)))
    else:
        solver = ista if algo == "ista" else fista
        codes = np.stack([solver(xt, A, D, lambda1, c, iters) for xt in x])
        obj = sum(lasso_objective(codes[t], x[t], A, D, lambda1) for t in range(len(x)))
    return codes @ D.T, float(obj)


def cmd_solve(args) -> int:
    if args.algo not in ("ista", "fista", "alg1"):
        raise UsageError(f"unknown algo {args.algo!r}")
    if args.iters < 0:
        raise UsageError("iters must be >= 0")
    ds = _load_dataset(args.dataset)
    h = args.hidden or int(ds.meta.get("h", 2 * ds.n0))
    n = int(round(args.cs_rate * ds.n0))
    A = data.sensing_matrix(n, ds.n0, args.seed)
    D = init_dictionary(ds.n0, h)
    c = lipschitz(A, D, seed=args.seed)
    rows = []
    for i in ds.splits[args.split]:
        s = ds.frames[i]
        s_hat, obj = solve_sequence(args.algo, s, A, D, args.lambda1, args.lambda2, args.iters, c)
        rows.append({"sequence": int(i), "psnr": data.psnr(s, s_hat), "mse": float(np.mean((s - s_hat) ** 2)),
                     "objective": obj})
    summary = {"algo": args.algo, "iters": args.iters,
               "mean_psnr": float(np.mean([r["psnr"] for r in rows])) if rows else None}
    _table(args, SOLVE_COLUMNS, rows, summary, "solve")
    return EXIT_OK


def cmd_bounds(args) -> int:
    p, _ = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    frames = ds.subset("train")
    if len(frames) == 0:
        frames = ds.frames
    Ts = _parse_T(args.T) if args.T else [ds.T]
    prof = bnd.norms_from_params(p, frames, T=Ts[0])
    kw = {"eta": args.eta, "delta": args.delta, "fast_a": args.fast_a}
    if len(Ts) > 1 or args.format == "csv":
        _emit(bnd.sweep_csv(prof, Ts, **kw), args.out, "bounds.csv")
    else:
        _emit(bnd.bound_report(prof, **kw).to_json(), args.out, "bounds.json")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    models = [v.value for v in Variant] if args.model == "all" else [_variant(args.model).value]
    rows = []
    for m in models:
        p, s = tiny_instance(m, seed=args.seed)
        rep = finite_diff_check(p, s, step=args.step, corrupt=args.corrupt)
        if rep.step_warning:
            log.warning(rep.step_warning)
        rows.append({"model": m, "passed": rep.passed, "max_error": rep.max_error,
                     "checked": rep.checked, "skipped": rep.skipped})
    _table(args, GRADCHECK_COLUMNS, rows, None, "gradcheck")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_CHECK


# -- parser -------------------------------------------------------------------

def _global_flags(parser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--out", type=Path, default=d(None), help="output file or directory")
    parser.add_argument("--format", choices=("csv", "json"), default=d("csv"), help="table format")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="seqsparse", description=__doc__)
    _global_flags(ap, suppress=False)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    g = add("gen-data", cmd_gen_data, "generate or import a dataset")
    g.add_argument("--kind", choices=("synthetic-sparse", "moving-square", "idx-import"), default="moving-square")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--T", type=int, default=8)
    g.add_argument("--n0", type=int, default=64, help="frame length (moving-square side = sqrt(n0))")
    g.add_argument("--hidden", type=int, default=None, help="code size for synthetic-sparse (default 2*n0)")
    g.add_argument("--k", type=int, default=5, help="sparsity for synthetic-sparse")
    g.add_argument("--side", type=int, default=None)
    g.add_argument("--square", type=int, default=None)
    g.add_argument("--idx", type=Path, default=None, help="IDX image file for idx-import")

    t = add("train", cmd_train, "train an unfolded model")
    t.add_argument("--model", default="reweighted")
    t.add_argument("--dataset", type=Path, required=True)
    t.add_argument("--depth", type=int, default=3)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--cs-rate", type=float, default=0.2)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--clip", type=float, default=0.25)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--factor", type=float, default=0.3)
    t.add_argument("--lambda1", type=float, default=None)
    t.add_argument("--lambda2", type=float, default=None)
    t.add_argument("--lambda-trials", type=int, default=0, help="random search trials for initial lambdas")
    t.add_argument("--freeze-A", action="store_true", help="keep the sensing matrix fixed")

    e = add("eval", cmd_eval, "PSNR/MSE of a checkpoint on a dataset split")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--split", choices=data.SPLIT_NAMES, default="test")

    s = add("solve", cmd_solve, "classical reconstruction with a fixed DCT dictionary")
    s.add_argument("--algo", default="fista")
    s.add_argument("--dataset", type=Path, required=True)
    s.add_argument("--lambda1", type=float, default=0.01)
    s.add_argument("--lambda2", type=float, default=0.01)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--hidden", type=int, default=None)
    s.add_argument("--cs-rate", type=float, default=0.5)
    s.add_argument("--split", choices=data.SPLIT_NAMES, default="test")

    b = add("bounds", cmd_bounds, "generalization bounds for a checkpoint")
    b.add_argument("--checkpoint", type=Path, required=True)
    b.add_argument("--dataset", type=Path, required=True)
    b.add_argument("--T", nargs="+", default=None, help="horizon(s): 8, 1..64 or 4,8,16")
    b.add_argument("--eta", type=float, default=1.0)
    b.add_argument("--delta", type=float, default=0.05)
    b.add_argument("--fast-a", type=float, default=0.5)

    c = add("gradcheck", cmd_gradcheck, "finite-difference gradient check on a tiny instance")
    c.add_argument("--model", default="reweighted", help="variant or 'all'")
    c.add_argument("--step", type=float, default=1e-6)
    c.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    return ap


def _threads() -> int | None:
    raw = os.environ.get("SEQSPARSE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SEQSPARSE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SEQSPARSE_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except UsageError as exc:
        print(f"seqsparse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"seqsparse: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
