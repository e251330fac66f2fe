"""Cross-subject emotion recognition from EEG and eye movements with hierarchical
attention fusion and distribution alignment (MMD + confidence-weighted CMMD with
uniform alignment of pseudo-labels)."""

__version__ = "0.1.0"
