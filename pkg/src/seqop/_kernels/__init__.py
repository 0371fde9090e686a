"""Hot inner loops, compiled when the extension is built.

Set ``SEQOP_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names
the implementation that was selected at import.
"""
import os

from . import fallback

if os.environ.get("SEQOP_PURE_PYTHON") == "1":
    heat_newton_step = fallback.heat_newton_step
    return_map_batch = fallback.return_map_batch
    element_integrals = fallback.element_integrals
    BACKEND = "python"
else:
    try:
        from ._plastic import element_integrals, return_map_batch
        from ._thermal import heat_newton_step

        BACKEND = "compiled"
    except ImportError:
        heat_newton_step = fallback.heat_newton_step
        return_map_batch = fallback.return_map_batch
        element_integrals = fallback.element_integrals
        BACKEND = "python"

__all__ = ["BACKEND", "element_integrals", "fallback", "heat_newton_step", "return_map_batch"]
