"""Desk-scale self-supervised representation learning for 1D biosignals.

Subpackages cover signal ingestion and synthesis (signal_core), view
augmentations (augment), a minimal autodiff + CNN stack (diffcore), the
three SSL objectives (ssl_objectives), training loops (train_harness),
multi-label metrics (metrics), and distribution-overlap analysis
(distshift). The ``ecgssl`` console script exposes the experiment CLI.
"""

__version__ = "0.1.0"
