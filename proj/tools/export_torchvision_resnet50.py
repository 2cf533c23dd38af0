#!/usr/bin/env python3
"""Convert torchvision ResNet-50 ImageNet weights into an MLDE weight archive.

    python3 tools/export_torchvision_resnet50.py resnet50.mlde
    python3 tools/export_torchvision_resnet50.py resnet50.mlde --state-dict local.pth

Prints the SHA-256 of the written file; put it in `pretrained_sha256`.
"""

import argparse
import hashlib
import json
import struct
import sys

import numpy as np

MAGIC = b"MLDEARC1"
VERSION = 1


def load_state_dict(path):
    import torch

    if path:
        return torch.load(path, map_location="cpu")
    from torchvision.models import ResNet50_Weights, resnet50

    return resnet50(weights=ResNet50_Weights.IMAGENET1K_V1).state_dict()


def write_archive(tensors, out_path, meta):
    names = sorted(tensors)
    entries, payload, offset = [], [], 0
    for name in names:
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = data.tobytes()
        entries.append({"name": name, "dtype": "f32", "shape": list(data.shape),
                        "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": "weights", "meta": meta, "tensors": entries},
                        separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(payload)
    blob = body + hashlib.sha256(body).digest()
    with open(out_path, "wb") as f:
        f.write(blob)
    return hashlib.sha256(blob).hexdigest()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--state-dict", help="local torch state_dict instead of the torchvision download")
    args = ap.parse_args()

    state = load_state_dict(args.state_dict)
    tensors = {k: v.detach().cpu().numpy() for k, v in state.items()
               if not k.endswith("num_batches_tracked")}
    if "fc.weight" not in tensors or tuple(tensors["fc.weight"].shape) != (1000, 2048):
        sys.exit("state dict does not look like a torchvision ResNet-50")
    digest = write_archive(tensors, args.out, {"source": "torchvision resnet50 IMAGENET1K_V1",
                                               "tensors": len(tensors)})
    print(f"wrote {len(tensors)} tensors to {args.out}")
    print(f"sha256 {digest}")


if __name__ == "__main__":
    main()
