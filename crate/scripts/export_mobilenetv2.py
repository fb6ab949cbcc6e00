"""Export Keras MobileNetV2 weights to the safetensors layout read by the
`mobilenetv2_pretrained` backbone.

    python scripts/export_mobilenetv2.py --out mobilenetv2.safetensors

Tensors are keyed "<layer>/<variable>", e.g. "block_3_depthwise/depthwise_kernel"
or "bn_Conv1/moving_variance". With --probe, a second file holds a batch of
random [0, 1] images ("input") and the pooled Keras features ("features"),
which the backbone parity test compares against.
"""

import argparse

import numpy as np
import tensorflow as tf
from safetensors.numpy import save_file


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--weights", choices=["imagenet", "random"], default="imagenet")
    ap.add_argument("--side", type=int, default=224)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probe")
    args = ap.parse_args()

    tf.keras.utils.set_random_seed(args.seed)
    model = tf.keras.applications.MobileNetV2(
        input_shape=(args.side, args.side, 3),
        include_top=False,
        weights=None if args.weights == "random" else "imagenet",
        pooling="avg",
    )
    rng = np.random.default_rng(args.seed)
    tensors = {}
    for layer in model.layers:
        for var in layer.weights:
            leaf = var.name.split("/")[-1].split(":")[0]
            if isinstance(layer, tf.keras.layers.DepthwiseConv2D) and leaf == "kernel":
                leaf = "depthwise_kernel"  # Keras 3 dropped the prefix
            value = var.numpy()
            if args.weights == "random" and leaf in ("gamma", "beta", "moving_mean", "moving_variance"):
                # Fresh statistics are the identity; perturb them so the check covers them.
                low, high = {"gamma": (0.5, 1.5), "beta": (-0.2, 0.2), "moving_mean": (-0.2, 0.2), "moving_variance": (0.5, 1.5)}[leaf]
                value = rng.uniform(low, high, value.shape).astype(np.float32)
                var.assign(value)
            tensors[f"{layer.name}/{leaf}"] = np.ascontiguousarray(value, dtype=np.float32)
    save_file(tensors, args.out)
    print(f"wrote {len(tensors)} tensors to {args.out}")

    if args.probe:
        x = rng.uniform(0.0, 1.0, (2, args.side, args.side, 3)).astype(np.float32)
        feats = model(x * 2.0 - 1.0, training=False).numpy()
        save_file({"input": x, "features": feats.astype(np.float32)}, args.probe)
        print(f"wrote probe batch to {args.probe}")


if __name__ == "__main__":
    main()
