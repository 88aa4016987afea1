"""Kernel lane selection: compiled extension if built, numpy fallback otherwise.

Set HARD_ISING_FORCE_FALLBACK=1 to force the pure lane (used by the
benchmark and the lane-agreement tests).
"""

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("HARD_ISING_FORCE_FALLBACK") != "1":
    _lane = _compiled
    COMPILED = True
else:
    _lane = _fallback
    COMPILED = False

gray_energies = _lane.gray_energies
downup_chain = _lane.downup_chain
eval_traces_batch = _lane.eval_traces_batch

fallback = _fallback
compiled = _compiled
