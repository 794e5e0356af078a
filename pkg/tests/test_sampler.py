import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from scenkit.model import (
    BBox3D,
    Context,
    CoordinateSystemSet,
    Dimensions,
    EventRecord,
    Frame,
    FrameState,
    LanePosition,
    Participant,
    Scenario,
    ScenarioMetadata,
    validate_scenario,
)
from scenkit.sampler import (
    MissingStates,
    NoSuchEvent,
    Variation,
    VariationSpec,
    emit_samples,
    extract_start_state,
    outcomes_csv,
    sample_id,
    sweep,
)
from scenkit.sim import SIM_EPOCH, ConfigError

# (lane before t=0.5, lane from t=1.0, s at t=0, speed)
VEHICLES = {"A": (1, 1, 0.0, 25.0), "C": (2, 1, 30.0, 20.0), "L": (1, 1, 80.0, 22.0), "F": (2, 2, -40.0, 20.0)}


def _state(lane, s, v, length=4.5):
    return FrameState(bbox3d=BBox3D((s, 3.5 * lane, 0.75), (length, 1.8, 1.5), 0.0), world_position=(s, 3.5 * lane),
                      speed=v, lane_position=LanePosition("r", lane, s))


@pytest.fixture
def cutin():
    """C moves from lane 2 into lane 1 between A (behind) and L (ahead) during [0.5, 1.0]."""
    frames = []
    for k, t in enumerate((0.0, 0.5, 1.0, 1.5)):
        states = {}
        for pid, (before, after, s0, v) in VEHICLES.items():
            states[pid] = _state(after if t >= 1.0 else before, s0 + v * t, v)
        frames.append(Frame(k, t, states))
    parts = {pid: Participant(pid, "car", Dimensions(4.5, 1.8, 1.5), (v, v)) for pid, (_, _, _, v) in VEHICLES.items()}
    md = ScenarioMetadata(SIM_EPOCH, "aerial_rgb_video", "research only", "reconstructed", "highway", 1.5,
                          {"dhw": (10.0, 60.0), "speed": (20.0, 25.0)})
    ev = EventRecord("lc1", (0.5, 1.0), {"C": "to_right"}, "lane_change")
    return Scenario("base", Context(), parts, (ev,), tuple(frames), md, CoordinateSystemSet(25832, (0.0, 0.0)))


def test_fixture_valid(cutin):
    assert validate_scenario(cutin).ok


def test_start_state_hand_checked(cutin):
    st = extract_start_state(cutin)
    assert (st.cut_in, st.approaching, st.t_start) == ("C", "A", 0.5)
    assert [v.participant_id for v in st.vehicles] == ["C", "A", "L"]
    # at t=0.5: C at 40, A at 12.5, both 4.5 m long
    assert st.gap == pytest.approx(40.0 - 12.5 - 4.5)
    assert st.approach_speed_delta == pytest.approx(5.0)


def test_target_lane_from_role_when_never_observed(cutin):
    frames = tuple(replace(f, states={**f.states, "C": replace(f.states["C"], lane_position=LanePosition(
        "r", 2, f.states["C"].lane_position.s))}) for f in cutin.frames)
    st = extract_start_state(replace(cutin, frames=frames))
    assert st.approaching == "A"
    left = replace(cutin, frames=frames, events=(EventRecord("lc1", (0.5, 1.0), {"C": "to_left"}, "lane_change"),))
    with pytest.raises(MissingStates):
        extract_start_state(left)  # lane 3 is empty


def test_missing_event_and_follower(cutin):
    with pytest.raises(NoSuchEvent):
        extract_start_state(replace(cutin, events=()))
    spec = VariationSpec("base", (Variation("cut_in_gap", (10.0,)),), event_id="nope")
    with pytest.raises(NoSuchEvent):
        sweep(spec, cutin)
    frames = tuple(replace(f, states={k: v for k, v in f.states.items() if k != "A"}) for f in cutin.frames)
    with pytest.raises(MissingStates):
        extract_start_state(replace(cutin, frames=frames))


def test_spec_validation_and_grid():
    spec = VariationSpec("b", (Variation("cut_in_gap", (5.0, 10.0)), Variation("approach_speed_delta", (1.0, 2.0, 3.0))))
    spec.validate()
    g = spec.grid()
    assert len(g) == 6
    assert g[0] == {"cut_in_gap": 5.0, "approach_speed_delta": 1.0}
    assert g[1] == {"cut_in_gap": 5.0, "approach_speed_delta": 2.0}
    with pytest.raises(ConfigError):
        VariationSpec("b", (Variation("cut_in_gap", (-1.0,)),)).validate()
    with pytest.raises(ConfigError):
        VariationSpec("b", (Variation("lateral_offset", (1.0,)),)).validate()
    with pytest.raises(ConfigError):
        VariationSpec("b", ()).validate()
    with pytest.raises(ConfigError):
        Variation.from_range("cut_in_gap", 1.0, 2.0, 1)


def test_from_dict_forms(cutin):
    d = {"base_scenario_id": "base", "varied": [{"parameter": "cut_in_gap", "from_ranges": 3},
                                               {"parameter": "approach_speed_delta", "range": [0, 4, 5]}]}
    spec = VariationSpec.from_dict(d, cutin)
    assert spec.varied[0].values == (10.0, 35.0, 60.0)
    assert spec.varied[1].values == (0.0, 1.0, 2.0, 3.0, 4.0)
    with pytest.raises(ConfigError):
        VariationSpec.from_dict(d)
    again = VariationSpec.from_dict(spec.to_dict())
    assert again == spec
    with pytest.raises(ConfigError):
        VariationSpec.from_dict({"base_scenario_id": "b", "varied": [{"parameter": "cut_in_gap"}]})


def test_sweep_hand_checked_a_req(cutin):
    spec = VariationSpec("base", (Variation("cut_in_gap", (23.0, 4.0, 1.0)),))
    out = sweep(spec, cutin)
    # dv = 5 from the recording; a_req = dv^2 / (2 (gap - cc0))
    assert out[0].a_req == pytest.approx(25.0 / (2 * 21.5))
    assert out[1].a_req == pytest.approx(5.0)
    assert out[2].a_req == math.inf and out[2].crashed
    assert not out[0].crashed and not out[1].crashed
    assert out[0].min_gap > 0.0
    assert out[0].approaching_class == "car"


def test_a_req_monotone_in_delta(cutin):
    spec = VariationSpec("base", (Variation("approach_speed_delta", tuple(np.linspace(0, 15, 31))),),
                         duration=10.0)
    a = [o.a_req for o in sweep(spec, cutin)]
    assert a[0] == 0.0
    assert all(x <= y for x, y in zip(a, a[1:]))


def test_sweep_deterministic_and_thread_independent(cutin):
    spec = VariationSpec("base", (Variation("cut_in_gap", (5.0, 12.0)), Variation("approach_speed_delta", (3.0, 9.0))),
                         duration=8.0)
    a = sweep(spec, cutin)
    b = sweep(spec, cutin, threads=4)
    assert [o.row(["cut_in_gap"]) for o in a] == [o.row(["cut_in_gap"]) for o in b]
    assert all(np.array_equal(x.trace.s, y.trace.s) for x, y in zip(a, b))


def test_emit_threshold_and_validity(cutin):
    spec = VariationSpec("base", (Variation("cut_in_gap", (1.0, 4.0, 40.0)),), duration=5.0)
    out = sweep(spec, cutin)
    assert [s.scenario_id for s in emit_samples(out, math.inf, spec)] == [sample_id(spec, out[0])]
    assert emit_samples(out[1:], 100.0, spec) == []
    emitted = emit_samples(out, 1.0, spec)
    assert len(emitted) == 2
    for s in emitted:
        assert validate_scenario(s).ok
        assert s.metadata.origin == "sampled"
        assert any(e.event_type == "cut_in" for e in s.events)
    assert emitted[0].frames[0].states["V0000"].behavior_risk == {"certain_collision": 1.0}
    assert emitted[1].frames[0].states["V0000"].behavior_risk == {"a_req": pytest.approx(5.0)}
    assert emitted[0].scenario_id == sample_id(spec, out[0]) != sample_id(spec, out[1])


def test_outcomes_csv(cutin):
    spec = VariationSpec("base", (Variation("cut_in_gap", (1.0, 23.0)),), duration=5.0)
    text = outcomes_csv(sweep(spec, cutin), ["cut_in_gap"])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["cut_in_gap", "a_req", "crashed", "min_gap", "min_ttc"]
    assert rows[0]["a_req"] == "inf" and rows[0]["crashed"] == "true"
    assert float(rows[1]["a_req"]) == pytest.approx(25.0 / 43.0)
