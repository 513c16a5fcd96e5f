"""Batch tool: apply emitted masks to a saved state dict."""

from __future__ import annotations

import argparse
import sys

import torch

from .masks import apply_masks


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="acp-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_apply = sub.add_parser("apply", help="zero masked kernels in a checkpoint")
    p_apply.add_argument("--checkpoint", required=True, help="state-dict .pt file")
    p_apply.add_argument("--masks", required=True, help="masks.json from the pruner")
    p_apply.add_argument("--manifest", required=True, help="bundle manifest JSON")
    p_apply.add_argument("--out", required=True, help="output .pt path")
    args = parser.parse_args(argv)

    state = torch.load(args.checkpoint, map_location="cpu", weights_only=True)
    masked = apply_masks(state, args.masks, args.manifest)
    torch.save(masked, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
