"""Batched-stream training experiment: consecutive batches with weight
windows tying each batch's solution to the previous one, plus a retention
check on the first batch after the stream ends.

Uses real IDX data when --data-dir (or MILPTRAIN_MNIST_DIR) points at it,
otherwise falls back to the bundled synthetic digit generator.
"""

import argparse
import os
import sys
import tempfile

from milptrain.dataset import downsample_set, load_split, make_batches
from milptrain.demo_data import write_synthetic_dataset
from milptrain.network import LayerSpec, accuracy, random_network
from milptrain.trainer import TrainConfig, metrics_to_csv, train_batched_stream

import numpy as np


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default=os.environ.get("MILPTRAIN_MNIST_DIR"))
    parser.add_argument("--batches", type=int, default=3)
    parser.add_argument("--batch-size", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-iterations", type=int, default=5)
    parser.add_argument("--time-limit", type=float, default=30.0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--metrics-out", default=None)
    args = parser.parse_args()

    if args.data_dir:
        data_dir = args.data_dir
    else:
        data_dir = tempfile.mkdtemp(prefix="milptrain-demo-")
        write_synthetic_dataset(
            data_dir,
            train_count=args.batches * args.batch_size,
            test_count=20,
            seed=7,
        )
        print(f"no data directory given; wrote synthetic digits to {data_dir}")

    train = downsample_set(load_split(data_dir, "train"))
    test = downsample_set(load_split(data_dir, "test"))
    batches = make_batches(train, args.batch_size)[: args.batches]
    test_data = (test.images.reshape(test.count, -1), test.labels)
    specs = [LayerSpec(49, 8), LayerSpec(8, 8), LayerSpec(8, 10)]

    config = TrainConfig(
        seed=args.seed,
        max_while_iterations=args.max_iterations,
        time_limit=args.time_limit,
        postprocess_every=max(args.batches, 1),
        jobs=args.jobs,
    )
    result = train_batched_stream(specs, batches, config, test_data)
    csv = metrics_to_csv(result.metrics)
    print(csv, end="")
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="ascii") as handle:
            handle.write(csv)

    first = batches[0]
    untrained = random_network(specs, np.random.default_rng(args.seed))
    base = accuracy(untrained, first.inputs, first.labels)
    kept = accuracy(result.network, first.inputs, first.labels)
    print(f"batch 1 accuracy: untrained {base:.4f}, after stream {kept:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
