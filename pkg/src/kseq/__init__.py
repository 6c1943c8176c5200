"""kseq: chromosome image tokenization, sequence mining, and abnormality
screening.

The pipeline turns a per-chromosome crop into a short token sequence
(erosion-based axis extraction, patch featurization, clustering, run-length
collapsing), mines per-class patterns from those sequences, and classifies
or flags structural changes by sequence divergence, with the edit script as
the explanation.
"""

from .config import TOOL_VERSION as __version__

__all__ = ["__version__"]
