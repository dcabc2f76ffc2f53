"""Hot-loop kernel selection.

The sampling and walk kernels exist twice: a compiled extension built from
``_kernels.pyx`` and a pure-Python reference in ``_kernels_py``.  Both
implement the same draw-order contract, so outputs are bit-identical for
equal seeds; the test suite asserts this.  The compiled module is preferred
when importable, and ``LOOPSOUP_PURE=1`` forces the reference path (useful
for benchmarking and for debugging kernel changes).
"""

import os

if os.environ.get("LOOPSOUP_PURE") == "1":
    from . import _kernels_py as _impl
    COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        COMPILED = True
    except ImportError:
        from . import _kernels_py as _impl
        COMPILED = False

sweep_soup = _impl.sweep_soup
box_stage_batch = _impl.box_stage_batch
ClusterWorkspace = _impl.ClusterWorkspace
escape_counts = _impl.escape_counts
excursion_batch = _impl.excursion_batch
