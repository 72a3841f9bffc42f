"""Command line for the bridge: export embeddings and regions in one go."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import BridgeConfig, BridgeError
from .export import export_embeddings, export_regions


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dclip-bridge", description=__doc__)
    p.add_argument("--dataset", required=True, help="directory with captions.tsv and image files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--encoder", choices=["hash", "clip"], default="hash")
    p.add_argument("--detector", choices=["grid", "torchvision"], default="grid")
    p.add_argument("--model-id", default="openai/clip-vit-base-patch32")
    p.add_argument("--embed-dim", type=int, default=512, choices=[512, 768])
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.add_argument("--skip-regions", action="store_true", help="export embeddings only")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    config = BridgeConfig(
        dataset_dir=args.dataset,
        out_dir=args.out,
        encoder=args.encoder,
        detector=args.detector,
        model_id=args.model_id,
        embed_dim=args.embed_dim,
        batch_size=args.batch_size,
        device=args.device,
    )
    try:
        image_path, text_path = export_embeddings(config)
        print(f"wrote {image_path} and {text_path}")
        if not args.skip_regions:
            regions_path = export_regions(config)
            print(f"wrote {regions_path}")
    except BridgeError as exc:
        print(f"dclip-bridge: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
