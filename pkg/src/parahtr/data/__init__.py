from .augment import AugmentationPolicy, augment, elastic_distort
from .dataset import (DataError, SynthSpec, bundled_corpus, load_split, read_manifest, split_dataset,
                      synthesize, write_dataset)
from .preprocess import downsample_halve, preprocess, resize
from .render import RenderOverflowError, WritingStyle, render_paragraph
from .sample import PageSample

__all__ = [
    "AugmentationPolicy", "augment", "elastic_distort", "DataError", "SynthSpec", "bundled_corpus",
    "load_split", "read_manifest", "split_dataset", "synthesize", "write_dataset", "downsample_halve",
    "preprocess", "resize", "RenderOverflowError", "WritingStyle", "render_paragraph", "PageSample",
]
