"""Command-line pipelines over the library.

Subcommands cover the full workflow: synthetic data generation,
dictionary construction, tensor and dictionary fitting, network
training, prediction and evaluation.  Every subcommand is seeded and
deterministic; ``--strict-deterministic`` additionally pins all BLAS
thread pools to one thread (before numpy is first imported) and forces
single-threaded voxel loops so repeated runs agree bit for bit.

Exit codes: 0 success, 2 usage error, 3 data or file-format error,
4 numeric failure.  Summary lines go to standard output; bulk data
only ever goes to files.

A ``--config FILE`` of ``key=value`` lines (keys are the long flag
names) may supply defaults for any subcommand; explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_SEED = 0

_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
              "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


@dataclass(frozen=True)
class RunConfig:
    """Shared execution settings derived from the parsed arguments."""

    subcommand: str
    seed: int
    threads: int
    strict: bool


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(
            f"must lie strictly in (0, 1), got {value}")
    return value


def _input_path(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _run_config(args) -> RunConfig:
    threads = getattr(args, "threads", None) or os.cpu_count() or 1
    strict = bool(getattr(args, "strict_deterministic", False))
    if strict:
        threads = 1
    return RunConfig(subcommand=args.subcommand,
                     seed=getattr(args, "seed", DEFAULT_SEED),
                     threads=threads, strict=strict)


# --------------------------------------------------------------------------
# subcommands (all heavy imports are local so --strict-deterministic can
# pin the BLAS environment before numpy loads)
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .data import NoiseSpec, make_dataset, save_dataset
    from .scheme import resolve_scheme

    scheme = resolve_scheme(args.scheme)
    noise = NoiseSpec(model=args.noise, snr=args.snr, seed=args.seed)
    dataset = make_dataset(scheme, args.n, noise=noise, seed=args.seed)
    save_dataset(dataset, args.out)
    print(f"gen-data: n={dataset.n_voxels} K={scheme.K} "
          f"noise={args.noise} snr={args.snr:g} seed={args.seed} -> {args.out}")
    return EXIT_OK


def _grid(args):
    import numpy as np

    from .dictionary import ParamGrid, default_grid
    from .signal import kappa_from_od

    if args.n_vic == 12 and args.n_od == 12:
        return default_grid()
    return ParamGrid(np.linspace(0.1, 0.99, args.n_vic),
                     np.sort(kappa_from_od(np.linspace(0.03, 0.95, args.n_od))))


def cmd_build_dict(args) -> int:
    import numpy as np

    from .dictionary import (OrientationSet, build_dictionary,
                             build_expanded_dictionary, export_csv,
                             save_dictionary)
    from .scheme import electrostatic_directions, resolve_scheme

    scheme = resolve_scheme(args.scheme)
    grid = _grid(args)
    if args.orientations > 0:
        dirs = electrostatic_directions(args.orientations, seed=args.seed)
        dictionary = build_expanded_dictionary(scheme, OrientationSet(dirs),
                                               grid)
    else:
        mu = np.asarray(args.mu, dtype=float)
        dictionary = build_dictionary(scheme, mu, grid)
    save_dictionary(dictionary, args.out)
    if args.csv:
        export_csv(dictionary, args.csv)
    print(f"build-dict: K={dictionary.K} width={dictionary.width} "
          f"aniso={dictionary.n_aniso} -> {args.out}")
    return EXIT_OK


def cmd_fit_dti(args) -> int:
    from .amico import dti_fit
    from .data import load_dataset

    dataset = load_dataset(_input_path(args.data))
    with open(args.out, "w") as fh:
        fh.write("voxel_id,e_x,e_y,e_z,residual,isotropic\n")
        for i in range(dataset.n_voxels):
            fit = dti_fit(dataset.scheme, dataset.signals[i])
            e = fit.principal_direction
            fh.write(f"{dataset.ids[i]:d},{e[0]:.17g},{e[1]:.17g},"
                     f"{e[2]:.17g},{fit.residual:.17g},{int(fit.isotropic)}\n")
    print(f"fit-dti: n={dataset.n_voxels} -> {args.out}")
    return EXIT_OK


def cmd_fit_amico(args) -> int:
    from .amico import amico_batch, write_amico_csv
    from .data import load_dataset
    from .metrics import evaluate, format_report

    run = _run_config(args)
    dataset = load_dataset(_input_path(args.data))
    results = amico_batch(dataset.scheme, dataset.signals, grid=_grid(args),
                          alpha=args.alpha, beta_scale=args.beta_scale,
                          solver_max_iter=args.max_iter, n_jobs=run.threads)
    write_amico_csv(results, args.out, voxel_ids=dataset.ids)
    print(f"fit-amico: n={dataset.n_voxels} -> {args.out}")
    if dataset.targets is not None:
        report = evaluate([r.microstructure for r in results],
                          list(dataset.targets))
        sys.stdout.write(format_report(report))
    return EXIT_OK


def _write_history_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,train_v_ic,train_v_iso,"
                 "train_od,val_v_ic,val_v_iso,val_od\n")
        for i in range(len(history.train_loss)):
            tc = history.train_components[i]
            vc = history.val_components[i]
            fh.write(f"{i + 1},{history.train_loss[i]:.17g},"
                     f"{history.val_loss[i]:.17g},"
                     + ",".join(f"{v:.17g}" for v in (*tc, *vc)) + "\n")


def cmd_train(args) -> int:
    from .data import DataError, load_dataset
    from .optim import TrainConfig

    dataset = load_dataset(_input_path(args.data))
    if dataset.targets is None:
        raise DataError("training requires a dataset with targets")
    config = TrainConfig(learning_rate=args.learning_rate,
                         batch_size=args.batch_size, epochs=args.epochs,
                         validation_fraction=args.val_fraction,
                         seed=args.seed, keep_last=args.keep_last)
    signals = dataset.signals
    targets = dataset.target_array()
    if args.model == "medn":
        from .medn import (default_init_dictionary, init_weights,
                           save_weights, train)
        weights = None
        if args.init == "dictionary":
            dictionary = default_init_dictionary(dataset.scheme,
                                                 seed=args.seed)
            weights = init_weights(signals.shape[1], dictionary.width,
                                   seed=args.seed, mode="dictionary",
                                   dictionary=dictionary)
        weights, history = train(signals, targets, config, weights)
        save_weights(weights, args.out)
    else:
        from .mlp import mlp_baseline_train, save_mlp_weights
        weights, history = mlp_baseline_train(signals, targets, config)
        save_mlp_weights(weights, args.out)
    for i in range(len(history.train_loss)):
        print(f"epoch {i + 1}: train_loss={history.train_loss[i]:.6f} "
              f"val_loss={history.val_loss[i]:.6f}")
    print(f"train: model={args.model} best_epoch={history.best_epoch} "
          f"-> {args.out}")
    if args.history:
        _write_history_csv(history, args.history)
    return EXIT_OK


def _load_any_weights(path):
    """Detect the weights kind by magic and return (kind, weights)."""
    from .data import DataError

    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"MDNW":
        from .medn import load_weights
        return "medn", load_weights(path)
    if magic == b"MLPW":
        from .mlp import load_mlp_weights
        return "mlp", load_mlp_weights(path)
    raise DataError(f"unrecognized weights file magic {magic!r}: {path}")


def cmd_predict(args) -> int:
    from .data import DataError, load_dataset

    dataset = load_dataset(_input_path(args.data))
    kind, weights = _load_any_weights(_input_path(args.weights))
    if weights.K != dataset.scheme.K:
        raise DataError(f"weights expect K={weights.K} but dataset has "
                        f"K={dataset.scheme.K}")
    if kind == "medn":
        from .medn import predict_batch
        preds = predict_batch(weights, dataset.signals)
    else:
        from .mlp import mlp_baseline_predict
        preds = mlp_baseline_predict(weights, dataset.signals)
    with open(args.out, "w") as fh:
        fh.write("voxel_id,v_ic,v_iso,od\n")
        for vid, m in zip(dataset.ids, preds):
            fh.write(f"{vid:d},{m.v_ic:.17g},{m.v_iso:.17g},{m.od:.17g}\n")
    print(f"predict: model={kind} n={len(preds)} -> {args.out}")
    return EXIT_OK


def _read_microstructure_csv(path):
    """Read any CSV whose header names v_ic, v_iso and od columns."""
    from .amico import Microstructure
    from .data import DataError

    with open(path) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"empty prediction file: {path}")
    header = lines[0].split(",")
    try:
        cols = {name: header.index(name)
                for name in ("voxel_id", "v_ic", "v_iso", "od")}
    except ValueError as exc:
        raise DataError(f"{path}: missing column: {exc}") from None
    clamp = lambda v: float(min(max(v, 0.0), 1.0))
    ids, out = [], []
    for row, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path} row {row}: field count mismatch")
        try:
            ids.append(int(parts[cols["voxel_id"]]))
            v_ic, v_iso, od = (float(parts[cols[q]])
                               for q in ("v_ic", "v_iso", "od"))
        except ValueError as exc:
            raise DataError(f"{path} row {row}: {exc}") from None
        out.append(Microstructure(
            v_ic=clamp(v_ic), v_iso=clamp(v_iso), od=clamp(od),
            raw_v_ic=v_ic, raw_v_iso=v_iso, raw_od=od))
    return ids, out


def _load_gold(path):
    """Gold standard from a dataset (targets) or a prediction CSV."""
    from .data import DataError, load_dataset

    with open(path) as fh:
        first = fh.readline()
    if first.startswith("VDS1 "):
        dataset = load_dataset(path)
        if dataset.targets is None:
            raise DataError(f"gold dataset has no targets: {path}")
        return list(dataset.ids), list(dataset.targets)
    return _read_microstructure_csv(path)


def cmd_evaluate(args) -> int:
    from .data import DataError
    from .metrics import evaluate, format_report, write_report_csv

    pred_ids, pred = _read_microstructure_csv(_input_path(args.pred))
    gold_ids, gold = _load_gold(_input_path(args.gold))
    if pred_ids != gold_ids:
        raise DataError("prediction and gold voxel ids do not match")
    comparator = None
    if args.comparator:
        cmp_ids, comparator = _read_microstructure_csv(
            _input_path(args.comparator))
        if cmp_ids != gold_ids:
            raise DataError("comparator and gold voxel ids do not match")
    report = evaluate(pred, gold, comparator)
    sys.stdout.write(format_report(report))
    if args.out:
        write_report_csv(report, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser assembly
# --------------------------------------------------------------------------

def _add_common(sub) -> None:
    sub.add_argument("--seed", type=int, default=DEFAULT_SEED,
                     help="random seed (fixed default, never time-based)")
    sub.add_argument("--threads", type=_positive_int, default=None,
                     help="voxel-level parallelism (default: all cores)")
    sub.add_argument("--strict-deterministic", action="store_true",
                     help="single-threaded, bit-reproducible execution")
    sub.add_argument("--config", default=None,
                     help="key=value file supplying flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noddikit",
        description="Tissue microstructure estimation toolkit")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--scheme", default="two_shell_60")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--snr", type=_positive_float, default=30.0)
    p.add_argument("--noise", choices=("rician", "gaussian", "none"),
                   default="rician")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("build-dict", help="build and save a dictionary")
    p.add_argument("--scheme", default="two_shell_60")
    p.add_argument("--mu", type=float, nargs=3, default=(0.0, 0.0, 1.0),
                   metavar=("X", "Y", "Z"))
    p.add_argument("--n-vic", type=_positive_int, default=12)
    p.add_argument("--n-od", type=_positive_int, default=12)
    p.add_argument("--orientations", type=int, default=0,
                   help="if > 0, build the expanded multi-orientation "
                        "dictionary with this many directions")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="also export atoms as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_build_dict)

    p = subs.add_parser("fit-dti", help="per-voxel tensor fits")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_fit_dti)

    p = subs.add_parser("fit-amico", help="dictionary fit per voxel")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=_nonnegative_float, default=0.0)
    p.add_argument("--beta-scale", type=_nonnegative_float, default=1e-3)
    p.add_argument("--max-iter", type=_positive_int, default=1000)
    p.add_argument("--n-vic", type=_positive_int, default=12)
    p.add_argument("--n-od", type=_positive_int, default=12)
    _add_common(p)
    p.set_defaults(func=cmd_fit_amico)

    p = subs.add_parser("train", help="train an estimation network")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("medn", "mlp"), default="medn")
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="epoch losses CSV")
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--learning-rate", type=_positive_float, default=1e-4)
    p.add_argument("--val-fraction", type=_fraction, default=0.1)
    p.add_argument("--keep-last", action="store_true",
                   help="return final-epoch weights, not best-validation")
    p.add_argument("--init", choices=("random", "dictionary"),
                   default="random", help="stage-one initialization (medn)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("predict", help="run a trained network")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("evaluate", help="MAD report, optional t-tests")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True,
                   help="dataset with targets, or a prediction CSV")
    p.add_argument("--comparator", default=None)
    p.add_argument("--out", default=None, help="report CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _load_config_file(path) -> dict:
    values = {}
    with open(_input_path(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(
                    f"{path} line {lineno}: expected key=value")
            key, value = stripped.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_defaults(parser, sub_argv, values) -> None:
    """Set file-supplied defaults on the subcommand parser; explicit
    flags still override because only defaults change."""
    subs = next(a for a in parser._actions
                if isinstance(a, argparse._SubParsersAction))
    sub = subs.choices.get(sub_argv)
    if sub is None:
        return
    for action in sub._actions:
        if action.dest in values:
            raw = values[action.dest]
            if isinstance(action, (argparse._StoreTrueAction,
                                   argparse._StoreFalseAction)):
                sub.set_defaults(
                    **{action.dest: raw.lower() in ("1", "true", "yes")})
            elif action.type is not None:
                sub.set_defaults(**{action.dest: action.type(raw)})
            else:
                sub.set_defaults(**{action.dest: raw})
            action.required = False


def _find_config(argv):
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--strict-deterministic" in argv:
        for var in _BLAS_VARS:
            os.environ[var] = "1"

    parser = build_parser()
    try:
        config_path = _find_config(argv)
        if config_path is not None:
            values = _load_config_file(config_path)
            if argv and not argv[0].startswith("-"):
                _apply_config_defaults(parser, argv[0], values)
        args = parser.parse_args(argv)
        return args.func(args)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        # malformed values that escaped argparse (config files, formats)
        from .solvers import SolverError
        if isinstance(exc, SolverError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
