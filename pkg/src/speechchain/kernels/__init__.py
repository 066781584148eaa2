"""Hot kernels: LSTM recurrences and edit distance.

The compiled extension is used when it imports; otherwise the NumPy versions
are.  Set ``SPEECHCHAIN_KERNELS=python`` to force the fallback.
"""
import os

from . import _py

BACKEND = "python"
_impl = _py
if os.environ.get("SPEECHCHAIN_KERNELS", "").lower() != "python":
    try:
        from . import _ext as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _py

lstm_cell_forward = _impl.lstm_cell_forward
lstm_cell_backward = _impl.lstm_cell_backward
lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
levenshtein = _impl.levenshtein
levenshtein_table = _impl.levenshtein_table

__all__ = [
    "BACKEND",
    "lstm_cell_forward",
    "lstm_cell_backward",
    "lstm_seq_forward",
    "lstm_seq_backward",
    "levenshtein",
    "levenshtein_table",
]
