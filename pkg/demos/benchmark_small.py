"""Miniature phantom benchmark: unrolled network vs dictionary fit vs MLP.

A scaled-down version of the full synthetic evaluation that runs in
about a minute:

  1. draw Rician-noised training and test phantoms (disjoint seeds),
  2. train the two-stage unrolled network from its dictionary-based
     initialization, and the three-hidden-layer MLP baseline,
  3. fit every test voxel with the dictionary method (DTI orientation
     + regularized NNLS),
  4. report per-quantity mean absolute deviations with paired t-tests.

The full-size run (50k train / 10k test, 10 epochs) is what the
acceptance suite executes; this demo keeps the same seeds and
hyperparameters but shrinks the sample counts so the mechanics are easy
to watch end to end.

Usage:
  python demos/benchmark_small.py
  python demos/benchmark_small.py --n-train 2000 --epochs 3   # fastest
"""

import argparse
import sys
import time
from pathlib import Path

# allow running straight from a checkout, without installing
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from noddikit.amico import amico_batch
from noddikit.data import NoiseSpec, make_dataset
from noddikit.medn import (
    default_init_dictionary,
    init_weights,
    predict_batch,
    train,
)
from noddikit.metrics import evaluate, format_report
from noddikit.mlp import mlp_baseline_predict, mlp_baseline_train
from noddikit.optim import TrainConfig
from noddikit.scheme import two_shell_60


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-train", type=int, default=10000)
    ap.add_argument("--n-test", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--snr", type=float, default=30.0)
    args = ap.parse_args(argv)

    scheme = two_shell_60()
    noise = NoiseSpec(model="rician", snr=args.snr)
    print(f"generating {args.n_train} training / {args.n_test} test voxels "
          f"(Rician, SNR {args.snr:g}) ...")
    t0 = time.perf_counter()
    train_ds = make_dataset(scheme, args.n_train, noise=noise, seed=1)
    test_ds = make_dataset(scheme, args.n_test, noise=noise, seed=2)
    print(f"  {time.perf_counter() - t0:.1f}s")

    cfg = TrainConfig(epochs=args.epochs, seed=0)
    print(f"training unrolled network ({args.epochs} epochs, batch "
          f"{cfg.batch_size}, lr {cfg.learning_rate:g}, dictionary init) ...")
    t0 = time.perf_counter()
    init_dict = default_init_dictionary(scheme)
    w0 = init_weights(scheme.K, init_dict.width, mode="dictionary",
                      dictionary=init_dict)
    weights, hist = train(train_ds.signals, train_ds.target_array(), cfg, w0)
    for i, (tl, vl) in enumerate(zip(hist.train_loss, hist.val_loss)):
        print(f"  epoch {i + 1}: train {tl:.4f}  val {vl:.4f}")
    print(f"  best epoch {hist.best_epoch}, "
          f"{time.perf_counter() - t0:.1f}s")

    print("training MLP baseline ...")
    t0 = time.perf_counter()
    mlp_w, mlp_hist = mlp_baseline_train(train_ds.signals,
                                         train_ds.target_array(), cfg)
    print(f"  best val {min(mlp_hist.val_loss):.4f}, "
          f"{time.perf_counter() - t0:.1f}s")

    print("dictionary-fitting the test set ...")
    t0 = time.perf_counter()
    amico_pred = [r.microstructure
                  for r in amico_batch(scheme, test_ds.signals)]
    print(f"  {time.perf_counter() - t0:.1f}s")

    medn_pred = predict_batch(weights, test_ds.signals)
    mlp_pred = mlp_baseline_predict(mlp_w, test_ds.signals)
    gold = list(test_ds.targets)

    print()
    print("network vs dictionary fit (comparator_mad = dictionary fit;"
          " negative t favors the network):")
    print(format_report(evaluate(medn_pred, gold, amico_pred)))
    print()
    print("MLP vs network (comparator_mad = network):")
    print(format_report(evaluate(mlp_pred, gold, medn_pred)))
    print()
    print("increase --n-train/--epochs to approach the full benchmark"
          " margins; tiny runs can leave the network undertrained.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
