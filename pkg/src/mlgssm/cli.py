"""Command-line interface: simulate, preprocess, fit, select, score.

Every failure ends with one JSON line on stderr, e.g.
``{"error": "SchemaError", "flag": null, "message": "row 4: ..."}``,
and a non-zero exit status (2 for usage errors, 1 otherwise).
"""

import argparse
import csv
import json
import logging
import os
import re
import sys

import numpy as np

from . import __version__
from .data import TimeSeriesDataset
from .exceptions import MlgssmError
from .initializer import InitConfig, best_params_per_series, init_from_params
from .io import load_dataset, load_model, save_dataset, save_model
from .lgssm_em import EmConfig
from .metrics import confusion_matrix, similarity_from_labels
from .mixture_em import fit_mixture
from .model_selection import bic, grid_search
from .preprocess import RECIPES, PipelineSpec, apply_pipeline
from .simulate import GroupSpec, SimSpec, generate_dataset, paper_groups

logger = logging.getLogger("mlgssm")


class UsageError(Exception):
    def __init__(self, message, flag=None):
        super().__init__(message)
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        m = re.search(r"argument (\S+?)[:/ ]", message)
        flag = m.group(1) if m else None
        if flag is None:
            m = re.search(r"required: (\S+?)[, ]?", message + " ")
            flag = m.group(1).rstrip(",") if m else None
        raise UsageError(message, flag)


def parse_int_range(text):
    """``"2..5"``, ``"2-5"`` or ``"2,3,5"`` -> list of ints."""
    text = text.strip()
    m = re.fullmatch(r"(\d+)\s*(?:\.\.|-|:)\s*(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer range: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty range")
    return values


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def parse_pipeline(text):
    """A recipe name, a path to a JSON list of steps, or ``"step:arg,step"``."""
    if text in RECIPES:
        return RECIPES[text]
    if os.path.isfile(text):
        with open(text) as fh:
            doc = json.load(fh)
        return PipelineSpec(doc["pipeline"] if isinstance(doc, dict) else doc)
    return PipelineSpec.parse(text)


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="cap on linear-algebra worker threads")
    p.add_argument("-v", "--verbose", action="store_true")


def _em_flags(p):
    p.add_argument("--epsilon", type=_positive_float, default=1e-4,
                   help="L1 parameter-change threshold for convergence")
    p.add_argument("--max-iter", type=_positive_int, default=100, help="mixture EM iterations")
    p.add_argument("--single-max-iter", type=_positive_int, default=200,
                   help="EM iterations per single-series fit during initialization")
    p.add_argument("--restarts", type=_positive_int, default=10,
                   help="random restarts per series during initialization (m)")
    p.add_argument("--kmeans-restarts", type=_positive_int, default=10)
    p.add_argument("--no-constrain-c", action="store_true",
                   help="leave the first row of C free")


def build_parser():
    parser = _Parser(prog="mlgssm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--paper-default", action="store_true",
                   help="three bands of 20 series (40-45, 80-90, 160-180 degrees), T=1000")
    p.add_argument("--T", type=_positive_int, default=None, help="series length")
    p.add_argument("--count", type=_positive_int, default=None, help="series per band")
    p.add_argument("--bands", default=None,
                   help="angle bands in degrees, e.g. '40:45,80:90,160:180'")
    p.add_argument("--out", required=True, help="output dataset CSV")

    p = sub.add_parser("preprocess", help="apply a transform pipeline to a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pipeline", required=True, type=parse_pipeline,
                   help=f"recipe ({', '.join(RECIPES)}), JSON file, or e.g. "
                        "'log_transform,difference:1'")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit a mixture and cluster the series")
    _common(p)
    _em_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--M", type=_positive_int, default=3, help="number of clusters")
    p.add_argument("--dx", type=_positive_int, default=2, help="state dimension")
    p.add_argument("--dy", type=_positive_int, default=None,
                   help="expected observation dimension (checked against the file)")
    p.add_argument("--out-dir", default=".",
                   help="receives model.json, labels.csv and trace.csv")

    p = sub.add_parser("select", help="BIC grid search over (M, dx)")
    _common(p)
    _em_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--M-range", type=parse_int_range, default=[2, 3, 4, 5])
    p.add_argument("--dx-range", type=parse_int_range, default=[2, 3, 4])
    p.add_argument("--seeds", type=parse_int_range, default=None,
                   help="initialization seeds per cell (default: --seed only)")
    p.add_argument("--free-params", action="store_true",
                   help="count only free covariance/C entries in the penalty")
    p.add_argument("--out-dir", default=".", help="receives bic.csv and best_model.json")

    p = sub.add_parser("score", help="compare predicted labels with true labels")
    _common(p)
    p.add_argument("--true", required=True,
                   help="dataset CSV with a label column, or a series_id,label CSV")
    p.add_argument("--pred", required=True, help="series_id,label CSV")
    p.add_argument("--out", default=None, help="optional JSON report")
    return parser


def _bands(text):
    deg = np.pi / 180.0
    out = []
    for tok in text.split(","):
        lo, _, hi = tok.partition(":")
        out.append((float(lo) * deg, float(hi) * deg))
    return out


def cmd_simulate(args):
    groups = paper_groups()
    if args.bands:
        try:
            bands = _bands(args.bands)
        except ValueError:
            raise UsageError(f"cannot parse bands {args.bands!r}", "--bands") from None
        groups = [GroupSpec(20, lo, hi) for lo, hi in bands]
    if args.count:
        for g in groups:
            g.count = args.count
    T = args.T or 1000
    if args.paper_default and (args.bands or args.count or args.T):
        raise UsageError("--paper-default cannot be combined with --bands/--count/--T",
                         "--paper-default")
    ld = generate_dataset(SimSpec(groups=groups, T=T, seed=args.seed))
    save_dataset(args.out, ld.dataset, ld.labels)
    logger.info("wrote %d series of length %d to %s", ld.dataset.n_series, T, args.out)
    return 0


def cmd_preprocess(args):
    ds = load_dataset(args.data)
    out = apply_pipeline(list(ds.values), args.pipeline)
    save_dataset(args.out, TimeSeriesDataset(out, ids=ds.ids, labels=ds.labels))
    return 0


def _configs(args, dx, M, seed):
    constrain = not args.no_constrain_c
    em = EmConfig(max_iter=args.max_iter, epsilon=args.epsilon, constrain_c_first_row=constrain)
    single = EmConfig(max_iter=args.single_max_iter, epsilon=args.epsilon,
                      constrain_c_first_row=constrain)
    init = InitConfig(m=args.restarts, dx=dx, M=M, kmeans_restarts=args.kmeans_restarts,
                      seed=seed, single=single)
    return em, init


def _write_labels(path, ids, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "label"])
        for sid, lab in zip(ids, labels):
            w.writerow([sid, int(lab)])


def _config_echo(args):
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


def cmd_fit(args):
    ds = load_dataset(args.data)
    if args.dy is not None and args.dy != ds.n_channels:
        raise UsageError(f"--dy {args.dy} does not match the {ds.n_channels} channel(s) "
                         f"in {args.data}", "--dy")
    if args.M > ds.n_series:
        raise UsageError(f"--M {args.M} exceeds the number of series ({ds.n_series})", "--M")
    em, init_cfg = _configs(args, args.dx, args.M, args.seed)
    fits = best_params_per_series(ds.values, init_cfg)
    theta0 = init_from_params(fits.params, args.M, args.dx, ds.n_channels,
                              constrain=em.constrain_c_first_row,
                              n_init=init_cfg.kmeans_restarts, seed=args.seed)
    res = fit_mixture(ds.values, theta0, em)
    os.makedirs(args.out_dir, exist_ok=True)
    meta = {
        "n_iter": res.n_iter,
        "converged": res.converged,
        "log_marginal_likelihood": res.log_marginal,
        "bic": bic(ds.values, res.params, constrain=em.constrain_c_first_row, config=em),
        "seed": args.seed,
        "n_series": ds.n_series,
        "length": ds.length,
        "config": _config_echo(args),
    }
    save_model(os.path.join(args.out_dir, "model.json"), res.params, meta)
    _write_labels(os.path.join(args.out_dir, "labels.csv"), ds.ids, res.labels)
    with open(os.path.join(args.out_dir, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "log_marginal_likelihood"])
        for i, v in enumerate(res.log_marginal_trace):
            w.writerow([i, repr(v)])
    print(f"iterations={res.n_iter} converged={res.converged} "
          f"log_marginal_likelihood={res.log_marginal:.6f}")
    return 0


def cmd_select(args):
    ds = load_dataset(args.data)
    if max(args.M_range) > ds.n_series:
        raise UsageError(f"--M-range reaches {max(args.M_range)} but there are only "
                         f"{ds.n_series} series", "--M-range")
    seeds = args.seeds if args.seeds is not None else [args.seed]
    em, init_cfg = _configs(args, args.dx_range[0], args.M_range[0], seeds[0])
    table = grid_search(ds.values, args.M_range, args.dx_range, seeds=seeds,
                        init_config=init_cfg, em_config=em, free_only=args.free_params)
    os.makedirs(args.out_dir, exist_ok=True)
    fields = ["M", "dx", "bic", "log_marginal", "seed", "converged", "n_iter", "failed", "error"]
    with open(os.path.join(args.out_dir, "bic.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in table.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    best = table.best
    meta = {
        "M": best.M, "dx": best.dx, "bic": best.bic, "seed": best.seed,
        "n_iter": best.n_iter, "converged": best.converged,
        "log_marginal_likelihood": best.log_marginal, "config": _config_echo(args),
    }
    save_model(os.path.join(args.out_dir, "best_model.json"), best.result.params, meta)
    _write_labels(os.path.join(args.out_dir, "best_labels.csv"), ds.ids, best.result.labels)
    print(table.to_text())
    print(f"best M={best.M} dx={best.dx} bic={best.bic:.6f}")
    return 0


def _read_labels(path):
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header and header[:2] == ["series_id", "t"]:
        ds = load_dataset(path)
        if ds.labels is None:
            raise UsageError(f"{path} has no label column", "--true")
        return dict(zip(ds.ids, ds.labels.tolist()))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"series_id", "label"} <= set(reader.fieldnames):
            raise UsageError(f"{path} needs series_id and label columns")
        return {row["series_id"]: row["label"] for row in reader}


def cmd_score(args):
    true = _read_labels(args.true)
    pred = _read_labels(args.pred)
    if set(true) != set(pred):
        raise UsageError("true and predicted labels cover different series", "--pred")
    ids = list(true)
    t = [str(true[i]) for i in ids]
    p = [str(pred[i]) for i in ids]
    sim = similarity_from_labels(t, p)
    mat, tc, pc = confusion_matrix(t, p)
    print(f"similarity={sim!r}")
    print("confusion_matrix (rows: true, columns: predicted)")
    print("true\\pred," + ",".join(pc.tolist()))
    for lab, row in zip(tc.tolist(), mat.tolist()):
        print(f"{lab}," + ",".join(str(v) for v in row))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"similarity": sim, "true_classes": tc.tolist(),
                       "pred_classes": pc.tolist(), "confusion_matrix": mat.tolist()}, fh,
                      indent=1)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "fit": cmd_fit,
    "select": cmd_select,
    "score": cmd_score,
}


def _error_line(kind, message, flag=None):
    sys.stderr.write(json.dumps({"error": kind, "flag": flag, "message": str(message)}) + "\n")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _error_line("UsageError", exc, exc.flag)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        _error_line("UsageError", exc, exc.flag)
        return 2
    except (MlgssmError, ValueError, OSError) as exc:
        _error_line(type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
