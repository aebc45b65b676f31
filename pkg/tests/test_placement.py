import pytest

from edgevr.placement import PLACEMENT_COUNT, PlacementState


class TestPlacement:
    def test_index_order(self):
        assert [p.value for p in PlacementState] == [0, 1, 2]
        assert PLACEMENT_COUNT == 3

    @pytest.mark.parametrize(
        "text,expected",
        [("ecu_full", PlacementState.ECU_FULL), ("ECU", PlacementState.ECU_FULL),
         ("full", PlacementState.ECU_FULL), ("ecu-decode", PlacementState.ECU_DECODE),
         ("decode", PlacementState.ECU_DECODE), ("Headset", PlacementState.HEADSET),
         (2, PlacementState.HEADSET), (PlacementState.ECU_DECODE, PlacementState.ECU_DECODE)],
    )
    def test_parse(self, text, expected):
        assert PlacementState.parse(text) is expected

    @pytest.mark.parametrize("bad", ["cloud", 3, -1])
    def test_parse_rejects(self, bad):
        with pytest.raises(ValueError):
            PlacementState.parse(bad)

    @pytest.mark.parametrize("p", list(PlacementState))
    def test_one_hot(self, p):
        vec = p.one_hot()
        assert sum(vec) == 1 and vec[p.value] == 1
