"""dctdet: baseline JPEG decoding to DCT coefficient planes and
frequency-domain SSD detection graphs with decode/FLOP benchmarking."""

__version__ = "0.1.0"

from .codec import (
    DctImage,
    DctPlane,
    JpegError,
    JpegFormatError,
    QuantizedPlane,
    UnsupportedJpegError,
    encode_baseline,
    full_decode,
    load_dct_tensor,
    parse_markers,
    partial_decode,
    save_dct_tensor,
)
from .detection import generate_priors, nms, postprocess
from .evaluation import EvaluationError, evaluate_map
from .graph import (
    GraphError,
    flop_count,
    load_weights,
    run_graph,
    save_weights,
    seed_weights,
)
from .zoo import ARCHITECTURE_IDS, BACKBONE_IDS, DETECTOR_IDS, build

__all__ = [
    "__version__",
    "DctImage",
    "DctPlane",
    "JpegError",
    "JpegFormatError",
    "QuantizedPlane",
    "UnsupportedJpegError",
    "encode_baseline",
    "full_decode",
    "load_dct_tensor",
    "parse_markers",
    "partial_decode",
    "save_dct_tensor",
    "generate_priors",
    "nms",
    "postprocess",
    "EvaluationError",
    "evaluate_map",
    "GraphError",
    "flop_count",
    "load_weights",
    "run_graph",
    "save_weights",
    "seed_weights",
    "ARCHITECTURE_IDS",
    "BACKBONE_IDS",
    "DETECTOR_IDS",
    "build",
]
