"""Black-box backdoor watermarking for dual-encoder retrieval models.

The owner hides adversarial trigger images that make the protected model
retrieve wrong captions, then trains a small transform module that corrects
exactly those triggers. Ownership of a suspicious model is claimed when the
triggers are anomalous on the model alone and corrected through the module.
"""

__version__ = "0.1.0"
