#!/usr/bin/env python3
"""Export torchvision ResNet ImageNet weights to the provenance tensor format.

The output `<out>/<arch>.bin` is what `backbone.weights_dir` points at:

    magic "PROVTNSR", u32 version (1), u32 tensor count, then per tensor
    u32 name length, name bytes, u32 dtype (0 float32, 1 int64),
    u32 ndim, ndim x i64 dims, raw little-endian data.

Tensor names follow the torchvision state_dict, buffers included.
"""

import argparse
import struct
import sys
from pathlib import Path

import torch
import torchvision

MAGIC = b"PROVTNSR"
ARCHITECTURES = ("resnet18", "resnet34")


def write_tensor_file(path, state):
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<II", 1, len(state)))
        for name, tensor in state.items():
            t = tensor.detach().cpu().contiguous()
            if t.dtype == torch.float32:
                dtype = 0
            elif t.dtype == torch.int64:
                dtype = 1
            else:
                t = t.to(torch.float32)
                dtype = 0
            encoded = name.encode("utf-8")
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<II", dtype, t.dim()))
            out.write(struct.pack(f"<{t.dim()}q", *t.shape))
            out.write(t.numpy().tobytes())


def read_tensor_file(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a tensor file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 16
    shapes = {}
    for _ in range(count):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + length].decode("utf-8")
        pos += length
        dtype, ndim = struct.unpack_from("<II", data, pos)
        pos += 8
        dims = struct.unpack_from(f"<{ndim}q", data, pos)
        pos += 8 * ndim
        numel = 1
        for d in dims:
            numel *= d
        pos += numel * (4 if dtype == 0 else 8)
        shapes[name] = tuple(dims)
    return shapes


def build(arch, source):
    if source == "imagenet":
        weights = torchvision.models.get_model_weights(arch).IMAGENET1K_V1
        return torchvision.models.get_model(arch, weights=weights)
    if source == "random":
        torch.manual_seed(0)
        return torchvision.models.get_model(arch, weights=None)
    model = torchvision.models.get_model(arch, weights=None)
    model.load_state_dict(torch.load(source, map_location="cpu"))
    return model


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--arch", choices=ARCHITECTURES + ("all",), default="all")
    parser.add_argument("--out", type=Path, default=Path("weights"), help="output directory")
    parser.add_argument(
        "--source",
        default="imagenet",
        help="'imagenet' (torchvision download), 'random' (untrained, for testing) "
        "or a path to a saved state_dict",
    )
    parser.add_argument("--check", type=Path, help="print the tensor names and shapes of an existing file")
    args = parser.parse_args(argv)

    if args.check:
        for name, shape in read_tensor_file(args.check).items():
            print(f"{name}\t{'x'.join(map(str, shape))}")
        return 0

    args.out.mkdir(parents=True, exist_ok=True)
    for arch in ARCHITECTURES if args.arch == "all" else (args.arch,):
        state = build(arch, args.source).state_dict()
        path = args.out / f"{arch}.bin"
        write_tensor_file(path, state)
        print(f"wrote {path} ({len(state)} tensors)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
