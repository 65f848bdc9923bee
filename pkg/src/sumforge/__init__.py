"""sumforge: desk-scale extractive and abstractive text summarization.

Corpus ingestion, WordPiece tokenization with per-sentence [CLS] encoding,
a from-scratch autodiff tensor core, transformer encoder/decoder models,
dual-optimizer fine-tuning, beam-search inference, and ROUGE evaluation.
"""

__version__ = "0.1.0"
