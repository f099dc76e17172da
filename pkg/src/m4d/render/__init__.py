from .raster import ALL_CHANNELS, RasterConfig, RenderOutput, rasterize, rasterize_naive
from .oracle import oracle_rasterize
from .backward import rasterize_backward

__all__ = [
    "ALL_CHANNELS",
    "RasterConfig",
    "RenderOutput",
    "rasterize",
    "rasterize_naive",
    "oracle_rasterize",
    "rasterize_backward",
]
