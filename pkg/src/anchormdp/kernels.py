"""Kernel backend selection.

Imports the compiled extension when present, otherwise falls back to the
numpy reference implementation. ``BACKEND`` records which one is active;
``ANCHORMDP_FORCE_PYTHON_KERNELS=1`` pins the fallback (used by the parity
tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("ANCHORMDP_FORCE_PYTHON_KERNELS") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND

epsilon_bar_table = _impl.epsilon_bar_table
surrogate_prob_table = _impl.surrogate_prob_table
margin_search_multi = _impl.margin_search_multi
