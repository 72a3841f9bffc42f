"""One-directional producer of dclip-format artifacts from real models.

Runs an image-text encoder pair and an object detector over an
image-caption dataset and writes the embedding caches (DCEC) and regions
JSONL that the dclip package trains and evaluates on. The primary package
never imports this one; the file formats are the entire interface.
"""

__version__ = "0.1.0"

from .config import BridgeConfig
from .export import export_embeddings, export_regions

__all__ = ["BridgeConfig", "export_embeddings", "export_regions", "__version__"]
