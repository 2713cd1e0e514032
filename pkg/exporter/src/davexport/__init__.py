"""davexport: records PyTorch checkpoint outputs into davalid packs."""

from .export import CheckpointEntry, ExportError, ExportSpec, export_pack, load_spec

__version__ = "0.1.0"

__all__ = ["CheckpointEntry", "ExportError", "ExportSpec", "export_pack",
           "load_spec", "__version__"]
