#!/usr/bin/env python3
"""Export VGG16 convolutional weights to the deepwound tensor archive.

    python3 tools/export_vgg16_backbone.py --source keras --out vgg16_keras.dwt
    python3 tools/export_vgg16_backbone.py --source torchvision --out vgg16_torch.dwt

Keras weights follow the caffe convention (BGR, mean subtraction) and are the
ones the classifier was trained on; torchvision weights expect normalised RGB.
The preprocessing tag stored in the archive tells the C++ side which to use.

--untrained builds the network with random weights (no download); with
--probe the backbone output for a fixed input is written next to the archive
so the C++ forward pass can be checked against the framework's.
"""

import argparse
import json
import struct
import sys

import numpy as np

BLOCKS = [2, 2, 3, 3, 3]
NAMES = [f"block{b + 1}_conv{c + 1}" for b, n in enumerate(BLOCKS) for c in range(n)]
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _fnv_py(data, h):
    for b in bytes(data):
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


try:
    import numba

    @numba.njit(cache=False)
    def _fnv_jit(data, h):
        for b in data:
            h ^= numba.uint64(b)
            h *= numba.uint64(FNV_PRIME)
        return h

    def fnv1a64(data: bytes, h: int) -> int:
        return int(_fnv_jit(np.frombuffer(data, dtype=np.uint8), np.uint64(h)))

except ImportError:  # pure Python: minutes for a full backbone
    fnv1a64 = _fnv_py


def write_archive(path, meta, tensors):
    index, offset, h = [], 0, FNV_OFFSET
    blobs = []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blob = arr.tobytes()
        offset += len(blob)
        h = fnv1a64(blob, h)
        blobs.append(blob)
    header = json.dumps(
        {"meta": meta, "tensors": index, "payload_bytes": offset, "payload_fnv1a64": f"{h:016x}"},
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as f:
        f.write(b"DWTA")
        f.write(struct.pack("<IQ", 1, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def keras_tensors(untrained, weights_file):
    import tensorflow as tf

    weights = None if untrained else (weights_file or "imagenet")
    model = tf.keras.applications.VGG16(weights=weights, include_top=False, input_shape=(None, None, 3))
    out = []
    for name in NAMES:
        kernel, bias = model.get_layer(name).get_weights()
        out.append((name, kernel.transpose(3, 2, 0, 1), bias))  # HWIO -> OIHW

    def features(x_chw):
        y = model(x_chw.transpose(1, 2, 0)[None].astype(np.float32), training=False).numpy()[0]
        return y.transpose(2, 0, 1)

    return out, "vgg16-caffe-bgr", features


def torch_tensors(untrained, weights_file):
    import torch
    import torchvision

    if weights_file:
        model = torchvision.models.vgg16()
        model.load_state_dict(torch.load(weights_file, map_location="cpu"))
    elif untrained:
        model = torchvision.models.vgg16()
    else:
        model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)
    model.eval()
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == len(NAMES)
    out = [(n, c.weight.detach().numpy(), c.bias.detach().numpy()) for n, c in zip(NAMES, convs)]

    def features(x_chw):
        with torch.no_grad():
            return model.features(torch.from_numpy(x_chw[None].astype(np.float32)))[0].numpy()

    return out, "vgg16-torch-rgb", features


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--source", choices=["keras", "torchvision"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="local weights file instead of downloading")
    p.add_argument("--untrained", action="store_true", help="random weights, no download")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe", type=int, metavar="SIDE", help="also write OUT.probe.json at this input side")
    args = p.parse_args(argv)

    np.random.seed(args.seed)
    if args.source == "keras":
        import tensorflow as tf

        tf.random.set_seed(args.seed)
        convs, tag, features = keras_tensors(args.untrained, args.weights)
    else:
        import torch

        torch.manual_seed(args.seed)
        convs, tag, features = torch_tensors(args.untrained, args.weights)

    tensors = []
    for name, kernel, bias in convs:
        tensors.append((f"{name}/kernel", kernel))
        tensors.append((f"{name}/bias", bias))
    meta = {
        "kind": "vgg16-backbone",
        "preprocessing_tag": tag,
        "source": args.source,
        "pretrained": not args.untrained,
    }
    write_archive(args.out, meta, tensors)
    print(f"wrote {len(tensors)} tensors ({tag}) to {args.out}", file=sys.stderr)

    if args.probe:
        rng = np.random.default_rng(args.seed)
        x = rng.normal(0.0, 1.0, size=(3, args.probe, args.probe)).astype(np.float32)
        y = features(x)
        with open(args.out + ".probe.json", "w") as f:
            json.dump({"side": args.probe, "input_chw": x.ravel().tolist(), "features_chw": y.ravel().tolist()}, f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
