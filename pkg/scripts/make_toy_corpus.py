#!/usr/bin/env python3
"""Generate the synthetic desk-scale corpus used by the demos and tests.

Writes WAVs plus three manifests (train/probe/noise) under --out. The probe
utterances carry synthetic background noise so the linear probe measures
robustness, not just clean separability.
"""

import argparse

from pase.toygen import make_toy_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--speakers", type=int, default=4)
    parser.add_argument("--train-per-speaker", type=int, default=5)
    parser.add_argument("--probe-per-speaker", type=int, default=12)
    parser.add_argument("--train-seconds", type=float, default=15.0)
    parser.add_argument("--probe-seconds", type=float, default=8.0)
    args = parser.parse_args()

    paths = make_toy_corpus(
        args.out,
        seed=args.seed,
        n_speakers=args.speakers,
        train_per_speaker=args.train_per_speaker,
        probe_per_speaker=args.probe_per_speaker,
        train_seconds=args.train_seconds,
        probe_seconds=args.probe_seconds,
    )
    for name, path in paths.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
