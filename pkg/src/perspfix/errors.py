"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PerspfixError(Exception):
    exit_code = 1


class InvalidInputError(PerspfixError, ValueError):
    exit_code = 2


class EmptyForegroundError(InvalidInputError):
    pass


class BehindCameraError(PerspfixError):
    exit_code = 3


class DegenerateGeometryError(PerspfixError):
    exit_code = 3


class FrustumError(PerspfixError):
    exit_code = 3


class PerspfixIOError(PerspfixError, OSError):
    exit_code = 4
