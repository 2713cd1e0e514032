"""davalid: unsupervised checkpoint selection for domain adaptation.

Scores recorded checkpoint outputs with label-free validation criteria,
selects checkpoints per pool, and quantifies how close each criterion comes
to oracle (labelled test set) selection.
"""

from ._kernels import backend_name
from .datapack import read_pack, validate_pack, write_pack
from .errors import DavalidError, InapplicableValidatorError, PackFormatError
from .validators import ValidatorSpec, default_specs, evaluate

__version__ = "0.1.0"

__all__ = [
    "DavalidError",
    "InapplicableValidatorError",
    "PackFormatError",
    "ValidatorSpec",
    "backend_name",
    "default_specs",
    "evaluate",
    "read_pack",
    "validate_pack",
    "write_pack",
    "__version__",
]
