"""Kernel backend selection: compiled extension if importable, numpy otherwise.

Set SPLATFILL_FORCE_NUMPY=1 to skip the extension (used by the benchmark and
by backend-equivalence tests).
"""
import os

from . import cpu

if os.environ.get("SPLATFILL_FORCE_NUMPY"):
    fast = None
else:
    try:
        from . import _fastcore as fast
    except ImportError:
        fast = None

BACKEND_NAME = fast.NAME if fast is not None else cpu.NAME
SIGMA_MIN = cpu.SIGMA_MIN
T_CUT = cpu.T_CUT
