"""patchforge: deterministic artifact-injection data synthesis.

Turns real images plus segmentation masks into artifact-injected image
pairs with rich annotations: grounds subentities to entities, computes
target-reference patch mappings with four injection tools, applies them
through a bit-exact pixel oracle and a desk-scale attention verifier,
filters the results, and emits training records, VQA samples, and
evaluation metrics.
"""

from .grid import PatchGrid, PatchMapping, Tool

__version__ = "0.1.0"

__all__ = ["PatchGrid", "PatchMapping", "Tool", "__version__"]
