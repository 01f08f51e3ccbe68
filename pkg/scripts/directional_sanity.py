"""Compare saliency against random relevance under black masking at several fractions."""

import argparse

from depthattr.harness import SweepConfig, prepare_model, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", default="attention", choices=["attention", "conv"])
    ap.add_argument("--images", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    cfg = SweepConfig(model_kind=args.kind, train_epochs=args.epochs, dataset_count=args.images,
                      methods=["saliency", "integrated_gradients", "random"], perturbations=[{"kind": "black"}],
                      fractions=[0.01, 0.05, 0.1], ig_steps=64, fe_bins=8)
    result = run_sweep(cfg, model=prepare_model(cfg), write=False)
    print(f"{'method':<22}{'percent':>8}{'ASR':>8}{'AF':>10}{'FE':>10}")
    for c in result.cells:
        print(f"{c.method:<22}{c.percent:>8g}{c.asr:>8.3f}{c.af:>10.4f}{c.fe:>10.4f}")


if __name__ == "__main__":
    main()
