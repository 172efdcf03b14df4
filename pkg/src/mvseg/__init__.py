"""Multi-view entity segmentation at desk scale.

Fixed-corner crop batching, query-based decoding with a cross-view
association module, set-prediction training, averaged multi-view fusion,
and class-agnostic evaluation tooling.
"""

__version__ = "0.1.0"
