"""Volumetric lung segmentation engine.

Volumes and masks cross the boundary as C-contiguous numpy arrays indexed
[z, y, x]; slice batches as [n, c, rows, cols]. Grid sizes and spacings in
argument lists are (x, y, z), matching the key=value config files.
"""

try:
    # Installed layout: the extension lives inside the package.
    from ._ctseg import (
        Net,
        confusion_scores,
        evaluate,
        generate_phantom,
        mask_to_original,
        preprocess,
        run,
    )
except ImportError:
    # Build-tree layout: the extension sits next to the package directory.
    from _ctseg import (
        Net,
        confusion_scores,
        evaluate,
        generate_phantom,
        mask_to_original,
        preprocess,
        run,
    )

__all__ = [
    "Net",
    "confusion_scores",
    "evaluate",
    "generate_phantom",
    "mask_to_original",
    "preprocess",
    "run",
]
