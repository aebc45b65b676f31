from __future__ import annotations

from enum import IntEnum


class PlacementState(IntEnum):
    """Where a GoP is decoded and rendered.

    The integer value is the index of the active element of the one-hot
    placement vector.
    """

    ECU_FULL = 0  # decode and render on the edge unit
    ECU_DECODE = 1  # decode on the edge unit, render on the headset
    HEADSET = 2  # decode and render on the headset

    @classmethod
    def parse(cls, value) -> "PlacementState":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper().replace("-", "_")
            aliases = {"ECU": "ECU_FULL", "FULL": "ECU_FULL", "DECODE": "ECU_DECODE"}
            key = aliases.get(key, key)
            try:
                return cls[key]
            except KeyError:
                raise ValueError(f"unknown placement {value!r}") from None
        return cls(int(value))

    def one_hot(self) -> tuple[int, int, int]:
        return tuple(int(i == self.value) for i in range(3))


PLACEMENT_COUNT = len(PlacementState)
