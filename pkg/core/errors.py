class ConditioningError(Exception):
    """Base class for every error raised by this package."""


class InputError(ConditioningError, ValueError):
    """Invalid input data, parameters or files (CLI exit code 2)."""


class IoFailure(ConditioningError, OSError):
    def __init__(self, path, detail):
        super().__init__(f"I/O failure on '{path}': {detail}")
        self.path = str(path)


class MissingFile(InputError):
    def __init__(self, view_id, path):
        super().__init__(f"{view_id}: missing file '{path}'")
        self.view_id = view_id
        self.path = str(path)


class DimensionMismatch(InputError):
    def __init__(self, view_id, detail=""):
        message = view_id if not detail else f"{view_id}: {detail}"
        super().__init__(message)
        self.view_id = view_id


class InvalidCamera(InputError):
    def __init__(self, view_id, detail=""):
        message = view_id if not detail else f"{view_id}: {detail}"
        super().__init__(message)
        self.view_id = view_id


class InvalidRaster(InputError):
    def __init__(self, path, detail):
        super().__init__(f"'{path}': {detail}")
        self.path = str(path)


class InvalidPreset(InputError):
    def __init__(self, key, detail):
        super().__init__(f"preset key '{key}': {detail}")
        self.key = key
        self.detail = detail


class BehindCamera(InputError):
    pass


class NonPositiveDepth(InputError):
    pass


class NoValidDepth(InputError):
    def __init__(self, view_id):
        super().__init__(f"{view_id}: no valid depth pixels")
        self.view_id = view_id


class GridMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class TooFewViews(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class TooSmall(InputError):
    pass


class InvalidFactor(InputError):
    pass
