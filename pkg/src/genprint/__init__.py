"""genprint: generator-fingerprint classification with margin-trained
perceptual hash digests and a cosine k-NN store."""

__version__ = "0.1.0"
