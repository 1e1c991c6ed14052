"""Error-correcting Hough voting for temporal action detection.

Snippet-level voters cast class and start/end offset votes; votes accumulate
into a quantized deviation cube per candidate window; per-class linear weight
maps over the cube, trained with a linear SVR, correct systematic vote errors
that break the classic Hough transform.
"""

from __future__ import annotations

from echt.core import (
    ActionLabel,
    Annotation,
    CubeGeometry,
    Interval,
    Snippet,
    f1,
    iou,
    make_labels,
    quantize_offset,
)

__version__ = "0.1.0"

__all__ = [
    "ActionLabel",
    "Annotation",
    "CubeGeometry",
    "Interval",
    "Snippet",
    "__version__",
    "f1",
    "iou",
    "make_labels",
    "quantize_offset",
]
