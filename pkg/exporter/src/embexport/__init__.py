"""embexport: run a VGG-style face descriptor over aligned crops and
write per-layer EMB1 files.

This package deliberately duplicates the geometric normalization and
photometric enhancement math of the experiment pipeline instead of
importing it; the two implementations are kept in agreement by shared
golden fixtures. The only runtime contract with the experiment side is
the manifest CSV it reads and the EMB1 files it writes.
"""

from embexport.export import ExportJob, ExportError, export

__all__ = ["ExportJob", "ExportError", "export"]
