"""datascout: automated curation, indexing, and retrieval of research data.

Pipeline stages: harvest community records, analyze every supported file,
generate file- and record-level curation reports, index chunk-averaged
description embeddings, and serve natural-language retrieval with a
force-directed exploration graph. An evaluation suite and a synthetic-data
generator sit on top of the same building blocks.
"""

__version__ = "0.1.0"
