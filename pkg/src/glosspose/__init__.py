"""Gloss-to-pose sequence generation with cross-modal alignment objectives.

Subpackages by responsibility:

- ``diffcore``: float64 tensors + taped reverse-mode differentiation
- ``seqmodel``: transformer gloss encoder / recursive pose decoder, MAE fit loss
- ``aligner``: fine-grained frame-to-gloss alignment loss (best-match pooling)
- ``comparator``: coarse-grained sequence-level contrast loss (in-batch triplets)
- ``synthcorpus``: deterministic synthetic corpus with known alignments
- ``evalkit``: pose/alignment metrics and heatmap export
- ``trainer``: joint objective, Adam loop, checkpoints, ablation gating
- ``cli``: batch command-line surface
"""

__version__ = "0.1.0"
