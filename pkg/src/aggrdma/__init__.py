"""Order aggressiveness series and their DMA / MF-DMA scaling analysis."""

__version__ = "0.1.0"

from .errors import AggrDmaError  # noqa: E402

__all__ = ["AggrDmaError", "__version__"]
