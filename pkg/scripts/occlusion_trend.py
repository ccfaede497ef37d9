"""Tracking error versus number of moving occluders, averaged over seeds.

Prints one line per (occluder count, seed) and a final table of means,
plus the error on dots that no camera sees.

    python scripts/occlusion_trend.py --seeds 0 1 2 --counts 0 50 100 --frames 4
"""

import argparse
import json
import logging
import time

import numpy as np

from tapetrack.evaluation import point_error
from tapetrack.mrf.energies import MRFParams
from tapetrack.pipeline import track_bundle
from tapetrack.synth import SceneConfig, generate_scene


def run(count, seed, frames, noise):
    cfg = SceneConfig(frame_count=frames, occluder_count=count, pixel_noise_sigma=noise, rng_seed=seed)
    bundle = generate_scene(cfg)
    records, _ = track_bundle(bundle, MRFParams(rng_seed=seed))
    errs, hidden = [], []
    for rec in records:
        f = rec["frame"]
        truth = {rc: p for rc, p in zip(bundle.topology.dots, bundle.truth.dots[f])}
        e = point_error(rec["nodes"], truth, f)
        errs.append(e.mean)
        vis = bundle.truth.visibility[f]
        hidden += [e.per_dot[rc] for rc, v in zip(bundle.topology.dots, vis) if v == 0]
    return float(np.mean(errs)), hidden


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--counts", type=int, nargs="+", default=[0, 50, 100])
    ap.add_argument("--frames", type=int, default=4)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--out", help="optional JSON file for the results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    table, hidden_all = {}, []
    for count in args.counts:
        per_seed = []
        for seed in args.seeds:
            t0 = time.time()
            mean, hidden = run(count, seed, args.frames, args.noise)
            per_seed.append(mean)
            hidden_all += hidden
            print(f"occluders {count:4d} seed {seed}: {mean:.4f} mm, hidden dots {len(hidden)} ({time.time() - t0:.0f}s)", flush=True)
        table[count] = float(np.mean(per_seed))
    print("occluders  mean error (mm)")
    for count, value in table.items():
        print(f"{count:9d}  {value:.4f}")
    if hidden_all:
        print(f"dots hidden from every camera: {len(hidden_all)}, mean error {np.mean(hidden_all):.3f} mm")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"means": table, "hidden_errors": hidden_all}, fh, indent=1)


if __name__ == "__main__":
    main()
