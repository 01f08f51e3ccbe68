"""Train both toy model kinds on synthetic scenes and save them under models/."""

import argparse
import logging
from pathlib import Path

from depthattr.models import build_model, save_model, train
from depthattr.scenes import generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("models"))
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--count", type=int, default=64)
    ap.add_argument("--lr", type=float, default=0.01)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    scenes = generate_dataset(1000, args.count)
    args.out.mkdir(parents=True, exist_ok=True)
    for kind in ("conv", "attention"):
        model, history = train(build_model(kind, seed=0), scenes, args.epochs, args.lr)
        path = args.out / f"{kind}.txt"
        save_model(model, path)
        logging.info("%s: loss %.4f -> %.4f, saved %s", kind, history[0], history[-1], path)


if __name__ == "__main__":
    main()
