"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, InputError -> 3,
anything else -> 4.
"""


class VascattrError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VascattrError):
    """Invalid or inconsistent pipeline configuration."""


class InputError(VascattrError):
    """Invalid input data: missing files, out-of-range coordinates, bad masks."""


class VolumeFormatError(InputError):
    """Malformed or unsupported volume file."""


class DegenerateInputError(VascattrError):
    """Input on which the requested statistic is undefined.

    Raised e.g. for Otsu thresholding of a constant volume or a Fisher
    contrast with zero variance in both regions but differing means.
    """
