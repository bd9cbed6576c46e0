"""
From video files to contrastive batches
=======================================

Builds a small synthetic corpus on disk, reads it back through the
manifest and score loaders, samples frames and draws tier-grouped batches.
"""

import tempfile
from pathlib import Path

import numpy as np

from nrvqa import build_contrastive_batch, ingest_vmaf_scores, load_manifest, sample_frames
from nrvqa.data import CompositionError, records_by_tier
from nrvqa.synthetic import make_synthetic_corpus

root = Path(tempfile.mkdtemp(prefix="nrvqa-demo-"))

# Two bitrate tiers with eight clips each. The low tier is heavily blocked
# and noisy; its pseudo-labels sit well below the high tier's.
corpus = make_synthetic_corpus(root, n_per_tier=8, frames=10, size=(32, 32), seed=0)
print(corpus.manifest.read_text().splitlines()[:4])

# The manifest carries no labels; scores arrive separately, keyed by video id.
records = load_manifest(corpus.manifest)
result = ingest_vmaf_scores(corpus.scores, records)
records = result.records
print(len(records), "records,", len(result.unlabeled), "without a score")

# Eight frames spread evenly over each clip; the result is float RGB in [0, 1].
frames = sample_frames(records[0], frame_count=8)
print([f.frame_index for f in frames], frames[0].pixels.shape, frames[0].pixels.dtype)

# Asking for more frames than a clip holds repeats the last one.
long = sample_frames(records[0], frame_count=14)
print("padding flags:", [f.is_padding for f in long])

# A batch of 8: four low-tier clips followed by four from a higher tier.
for seed in range(3):
    batch = build_contrastive_batch(records, 8, p=0.5, rng_seed=seed)
    print(seed, [r.bitrate_tier for r in batch.records], batch.video_ids[:2], "...")

# Group means per tier show what the contrastive term will exploit.
for tier, recs in sorted(records_by_tier(records).items()):
    print("tier", tier, "mean label", round(float(np.mean([r.label for r in recs])), 1))

# With only one tier present no batch can be formed.
try:
    build_contrastive_batch([r for r in records if r.bitrate_tier == 1], 8, 0.5, 0)
except CompositionError as exc:
    print("refused:", exc)
