"""Exception hierarchy shared by all memkeys modules.

Two base classes split the failure space the way the CLI needs it:
``InputError`` for bad or corrupt inputs (exit 3) and ``UsageError`` for
caller mistakes such as invalid options (exit 2).
"""


class MemkeysError(Exception):
    pass


class InputError(MemkeysError):
    pass


class UsageError(MemkeysError):
    pass


# memimage
class UnreadableFile(InputError):
    pass


class MalformedElf(InputError):
    pass


class EmptyImage(InputError):
    pass


class ChunkTooSmall(UsageError):
    pass


class OutOfRange(UsageError):
    pass


class SpansSegments(UsageError):
    pass


# keyscan
class BadKeyLength(UsageError):
    pass


class EmptyWindow(UsageError):
    pass


class InvalidOptions(UsageError):
    pass


# filerec
class TooShort(InputError):
    pass


class MarkerNotFound(InputError):
    pass


class MisalignedCiphertext(InputError):
    pass


class BadKeySize(UsageError):
    pass


# timeline
class DuplicateLabel(InputError):
    pass


class EmptySeries(InputError):
    pass


# synth
class OverlappingPlants(UsageError):
    pass


class PlantOutOfRange(UsageError):
    pass


class InputTooShort(InputError):
    pass


class ManifestMismatch(InputError):
    pass
