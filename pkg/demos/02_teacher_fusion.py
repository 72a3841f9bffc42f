"""Anatomy of the teacher: region weighting, bidirectional attention, and
temperature-scaled aggregation on one synthetic sample.

The teacher sees caption tokens and detector regions. Each region crop is
encoded separately, weighted by confidence * sqrt(area) * cos-to-caption,
fused with the tokens through two disjoint attention blocks, and collapsed
into one global embedding whose weights favor rows near the consensus.
"""

import numpy as np

from dclip.data import SyntheticSpec, gen_synthetic, load_samples
from dclip.encoders import EncoderConfig, build_encoder_pair
from dclip.fusion import FusionParams, aggregate_global, bidirectional_fuse, region_stream
from dclip.regions import load_regions
from dclip.tensor import Tensor
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as workdir:
    root = Path(workdir) / "toy"
    gen_synthetic(SyntheticSpec(train_size=4, heldout_size=1, seed=42), root)
    sample = load_samples(root / "train.jsonl")[0]
    regions = {r.image_id: r for r in load_regions(root / "regions.jsonl")}[sample.id]

text_enc, image_enc = build_encoder_pair(EncoderConfig(embed_dim=64, num_heads=4, seed=42))

# frozen encodings: per-crop image embeddings + caption tokens
crops = np.stack([image_enc.encode_global(sample.parts[i : i + 1]).data
                  for i in range(sample.parts.shape[0])])
text_global, text_feats = text_enc.encode(sample.tokens)

print(f"sample {sample.id}: {crops.shape[0]} region crops, {len(sample.tokens)} caption tokens")
print("region confidences:", [round(r.confidence, 3) for r in regions.regions])

# penalty weighting: contradictory regions (cos <= 0) are dropped outright
rows = region_stream(crops, text_global.data, regions)
print("weights (max-normalized):", [round(w, 3) for w in (regions.weights or [])])
print(f"region stream kept {rows.shape[0]} of {crops.shape[0]} rows")

# two attention directions, no shared parameters
params = FusionParams.create(embed_dim=64, num_heads=4, seed=42)
text_ctx, region_ctx = bidirectional_fuse(Tensor(text_feats.data), Tensor(rows), params)
print("attended shapes:", text_ctx.shape, region_ctx.shape)

# aggregation: softmax over cosine-to-mean at a temperature
for tau in (1e6, 0.07, 1e-6):
    fused = aggregate_global(region_ctx, tau)
    weights = np.round(fused.weights.data, 3)
    print(f"tau={tau:>8}: aggregation weights {weights}")
print("high tau -> uniform averaging; low tau -> winner-take-all on the most central row")
