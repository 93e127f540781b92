#!/usr/bin/env python3
"""Export ImageNet ResNet-50 weights as a TorchScript archive the C++ encoder can load.

Usage: export_resnet50_weights.py [output.pt]
"""
import os
import sys

import torch
import torchvision


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "weights/resnet50_imagenet.pt"
    model = torchvision.models.resnet50(weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V1)
    model.eval()
    scripted = torch.jit.script(model)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    scripted.save(out)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
