from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class PageSample:
    """A paragraph image (float, white background) with its transcript."""

    image: np.ndarray
    transcript: str
    text_mask: np.ndarray | None = None
    style_id: int = 0
    dpi: int = 300
    sample_id: str = ""

    def __post_init__(self) -> None:
        if not self.transcript:
            raise ValueError("transcript must be non-empty")
        if self.text_mask is not None and self.text_mask.shape != self.image.shape:
            raise ValueError(f"text_mask shape {self.text_mask.shape} != image shape {self.image.shape}")

    def with_(self, **changes) -> "PageSample":
        return replace(self, **changes)
