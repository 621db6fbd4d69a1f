import os

import numba

_ENV = "CBCT_THREADS"


def configure_threads() -> int:
    """Cap numba's worker count at ``$CBCT_THREADS`` (if set); returns the active count."""
    raw = os.environ.get(_ENV)
    if raw:
        try:
            wanted = int(raw)
        except ValueError:
            raise ValueError(f"{_ENV} must be an integer, got {raw!r}") from None
        numba.set_num_threads(max(1, min(wanted, numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()
