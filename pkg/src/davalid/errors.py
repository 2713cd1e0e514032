"""Exception types shared across the package."""


class DavalidError(Exception):
    """Base class for all davalid errors."""


class PackFormatError(DavalidError):
    """A pack directory, manifest, or tensor file violates the on-disk format
    or one of its data invariants."""


class InapplicableValidatorError(DavalidError):
    """A validator spec cannot be evaluated on the given pack (wrong setting,
    missing domain or split)."""
