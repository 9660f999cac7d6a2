#!/usr/bin/env python3
"""Convert an SVHN cropped-digits .mat file (train_32x32.mat, test_32x32.mat)
into the raw_tensor container read by `dataset.kind = raw_tensor`.

usage: svhn_to_raw_tensor.py train_32x32.mat svhn_train.ptns [--name svhn]
"""
import argparse
import json
import struct

import numpy as np
import scipy.io


def write_container(path, meta, tensors):
    entries, payload, offset = [], [], 0
    for name, dtype, arr in tensors:
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"format": "pilot-tensors", "version": 1, "meta": meta, "tensors": entries}).encode()
    with open(path, "wb") as f:
        f.write(b"PILOTTNS")
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in payload:
            f.write(raw)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("mat")
    ap.add_argument("out")
    ap.add_argument("--name", default="svhn")
    args = ap.parse_args()

    m = scipy.io.loadmat(args.mat)
    # X is [32, 32, 3, N] (H, W, C, N); the loader wants [N, C, H, W].
    x = np.transpose(m["X"], (3, 2, 0, 1)).astype(np.uint8)
    y = m["y"].reshape(-1).astype(np.int64)
    y[y == 10] = 0  # SVHN stores the digit 0 as label 10
    write_container(args.out, {"name": args.name, "num_classes": 10}, [("images", "u8", x), ("labels", "i64", y)])
    print(f"wrote {args.out}: {x.shape[0]} images {tuple(x.shape[1:])}")


if __name__ == "__main__":
    main()
