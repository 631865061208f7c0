"""Synthetic multi-label data: cluster structure, noise knobs, file format.

The generator builds samples around label clusters: each sample picks one
cluster and takes a noisy copy of that cluster's label set, while its sparse
features are token counts drawn mostly from vocabulary blocks tied to the
cluster. Sibling clusters share a core label and a feature block, so they are
easy to confuse from features alone -- the regime where neighbor retrieval
has something to add over a plain classifier.
"""
import collections
import tempfile
from pathlib import Path

import numpy as np

from knnmlc.data import (
    DatasetConfig,
    cluster_layout,
    frequency_groups,
    generate_synthetic,
    label_frequencies,
    load_jsonl,
    save_jsonl,
)

# --- generate the default dataset -----------------------------------------

cfg = DatasetConfig(seed=0)
train, valid, test = generate_synthetic(cfg)
print(f"splits: {len(train)} train / {len(valid)} valid / {len(test)} test")
print(f"classes: {cfg.num_classes}, clusters: {cfg.num_clusters}, vocab: {cfg.vocab_size}")

label_sets, own_blocks, pair_blocks, priors = cluster_layout(cfg)
print("\ncluster label sets (first label of each pair is the shared core):")
for g, ls in enumerate(label_sets):
    print(f"  cluster {g}: labels {ls.tolist()}  prior {priors[g]:.3f}")

# --- label statistics -------------------------------------------------------

counts = [int(s.labels.sum()) for s in train]
print(f"\npositives per sample: mean {np.mean(counts):.2f}, min {min(counts)}, max {max(counts)}")
print("  (every sample has at least one positive label by construction)")

freqs = label_frequencies(train)
print("\nlabel frequencies in train:", freqs.tolist())
print("  skewed cluster priors make the later clusters' labels rare")

# --- frequency groups -------------------------------------------------------

groups = frequency_groups(train, num_groups=4)
by_group = collections.defaultdict(list)
for label, g in groups.items():
    by_group[g].append(label)
print("\nautomatic frequency groups (descending frequency, near-equal sizes):")
for g in sorted(by_group):
    print(f"  group {g}: labels {sorted(by_group[g])}")

# explicit boundaries are also supported, e.g. the classic >4500 / >1700 / >870 split
# for corpus-scale frequency tables: frequency_groups(train, thresholds=[4500, 1700, 870])

# --- the file format ---------------------------------------------------------

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "train.jsonl"
    save_jsonl(train, path, cfg.num_classes, cfg.vocab_size)
    first_two = path.read_text().splitlines()[:2]
    print("\nfile format (header line, then one record per sample):")
    for line in first_two:
        print(" ", line[:100] + ("..." if len(line) > 100 else ""))
    reloaded, C, V = load_jsonl(path)
    print(f"round trip: {len(reloaded)} samples back, equal to originals: {reloaded == train}")
