"""Frames per second of each tracker on a synthetic sequence, and the
constant-cost check (short vs long sequence) for the streaming tracker."""

import argparse
import json

import numpy as np
import torch

from pipsus.baselines import NCCTracker, ZeroMotionTracker
from pipsus.config import TrackerConfig
from pipsus.datamodel import VideoSequence
from pipsus.keypoints import grid_points
from pipsus.metrics import machine_descriptor, measure_fps
from pipsus.simulator import speckle_image
from pipsus.tracker import PIPsUS, StreamingTracker


def video(T, size, rng):
    base = speckle_image(size, rng)
    return VideoSequence(np.stack([np.roll(base, (t % 7, t % 5), (0, 1)) for t in range(T)]))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=50)
    ap.add_argument("--long", type=int, default=500)
    ap.add_argument("--grid-stride", type=int, default=32)
    args = ap.parse_args()
    torch.set_num_threads(1)
    rng = np.random.default_rng(0)
    cfg = TrackerConfig()
    pts = grid_points(*cfg.image_size, args.grid_stride)
    short = video(args.frames, cfg.image_size, rng)
    model = PIPsUS(cfg).eval()
    out = {"machine": machine_descriptor(), "points": len(pts)}
    for name, tr in (("pipsus", StreamingTracker(model)), ("ncc", NCCTracker()), ("zero", ZeroMotionTracker())):
        rep = measure_fps(tr, short, pts)
        out[name] = {"fps": rep.fps, "runs": rep.runs}
    long = video(args.long, cfg.image_size, rng)
    out["pipsus_long"] = {"fps": measure_fps(StreamingTracker(model), long, pts, runs=1).fps}
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
