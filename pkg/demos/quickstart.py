"""Quickstart: synthesize a few voxels and recover their microstructure.

Walks the shortest useful path through the toolkit:

  1. pick an acquisition scheme (61 gradients over b=0/1000/2000),
  2. synthesize noiseless three-compartment signals for hand-chosen
     tissue configurations,
  3. run the dictionary fit (DTI orientation, then regularized NNLS
     over the response atoms),
  4. compare estimated v_ic / v_iso / OD against the generating truth.

Usage:
  python demos/quickstart.py
  python demos/quickstart.py --snr 30    # add Rician noise first
"""

import argparse
import sys
from pathlib import Path

# allow running straight from a checkout, without installing
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from noddikit.amico import amico_batch
from noddikit.data import NoiseSpec, add_noise
from noddikit.scheme import two_shell_60
from noddikit.signal import TissueParams, kappa_from_od, synthesize

# (label, v_ic, v_iso, od, orientation) — spans coherent white matter,
# dispersed gray matter, a partial-volume CSF voxel and pure CSF
CASES = [
    ("coherent WM", 0.70, 0.05, 0.10, (0.0, 0.0, 1.0)),
    ("dispersed GM", 0.40, 0.10, 0.80, (1.0, 1.0, 0.0)),
    ("mixed + CSF", 0.55, 0.40, 0.30, (1.0, 0.0, 1.0)),
    ("pure CSF", 0.00, 1.00, 0.50, (0.0, 0.0, 1.0)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--snr", type=float, default=0.0,
                    help="add Rician noise at this SNR (0 = noiseless)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    scheme = two_shell_60()
    print(f"scheme: {scheme.K} gradients, shells "
          f"{sorted(set(scheme.bvalues.tolist()))}")

    signals = np.empty((len(CASES), scheme.K))
    for i, (label, v_ic, v_iso, od, mu) in enumerate(CASES):
        mu = np.asarray(mu, dtype=float)
        params = TissueParams(v_ic=v_ic, v_iso=v_iso,
                              kappa=kappa_from_od(od),
                              mu=mu / np.linalg.norm(mu))
        signals[i] = synthesize(scheme, params)
    if args.snr > 0:
        spec = NoiseSpec(model="rician", snr=args.snr, seed=args.seed)
        signals = np.stack([add_noise(y, spec,
                                      np.random.default_rng([args.seed, i]))
                            for i, y in enumerate(signals)])
        print(f"added Rician noise at SNR {args.snr:g}")

    results = amico_batch(scheme, signals)

    print()
    print(f"{'case':>12}  {'v_ic':>11}  {'v_iso':>11}  {'od':>11}")
    print(f"{'':>12}  {'true  est':>11}  {'true  est':>11}  {'true  est':>11}")
    for (label, v_ic, v_iso, od, _), res in zip(CASES, results):
        m = res.microstructure
        note = "  (degenerate: no anisotropic mass)" if m.degenerate else ""
        print(f"{label:>12}  {v_ic:.2f} {m.v_ic:5.2f}  "
              f"{v_iso:.2f} {m.v_iso:5.2f}  {od:.2f} {m.od:5.2f}{note}")
    print()
    print("(where v_iso ~ 1 the anisotropic compartment carries almost no"
          " signal, so v_ic and OD are unidentifiable there: trust them"
          " only at moderate v_iso)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
