from __future__ import annotations


class ForgeError(Exception):
    """Base error; `exit_code` is what the CLI returns for it."""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(ForgeError):
    exit_code = 2


class DataError(ForgeError):
    exit_code = 3


class EmptyInventoryError(DataError):
    def __init__(self, detail: str = "empty inventory", summary=None):
        super().__init__(detail)
        self.summary = summary


class WindowOverflowError(DataError):
    def __init__(self, building_id: str, extent_m: float, window_m: float):
        super().__init__(
            f"window overflow: building '{building_id}' spans {extent_m:.2f} m "
            f"but the raster window is {window_m:.2f} m"
        )
        self.building_id = building_id


class StageMissingError(DataError):
    def __init__(self, stage: str, artifact: str, prerequisite: str):
        super().__init__(
            f"stage '{stage}' needs '{artifact}'; run `forge {prerequisite}` first"
        )
        self.prerequisite = prerequisite


class NumericalError(ForgeError):
    exit_code = 4
