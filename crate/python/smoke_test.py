"""End-to-end check of the Python bindings against the bundled scenarios."""

import math
import pathlib

import qdelay

SCENARIOS = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "scenarios"


def test_constants_and_condition():
    s = qdelay.Scenario.load(SCENARIOS / "fig2.json")
    c = s.constants()
    assert c["constants"]["m1"] == {"value": 4.5, "provenance": "pinned"}
    assert c["constants"]["m3"]["provenance"] == "computed"
    assert c["condition"]["holds"] is False
    assert c["switching"]["tau"] == 1.25
    assert math.isclose(c["derived"]["small_gain_lhs"], 0.3136479, rel_tol=1e-6)


def test_switched_run_converges():
    r = qdelay.Scenario.load(SCENARIOS / "fig2.json").run()
    assert len(r["t"]) == len(r["norm"]) == 4001
    # the pinned tau puts the initial condition inside the range at once
    assert r["t0"] == 0.0
    assert r["phase"][0] == "hold" and r["phase"][-1] == "zoom_in"
    assert r["norm"][-1] < 1e-3 * r["norm"][0]
    assert r["analysis"]["summary"]["classification"] == "converged"


def test_baselines():
    s = qdelay.Scenario.load(SCENARIOS / "fig2.json").with_value("grid.horizon_s", 10.0)
    assert s.run("open_loop")["analysis"]["summary"]["classification"] == "diverged"
    assert s.run(10.0)["phase"][0] == "hold"


def test_verify_and_errors():
    s = qdelay.Scenario.load(SCENARIOS / "input_mode.json")
    assert all(ok for _, ok, _ in s.verify())
    try:
        s.with_value("grid.dt_s", 0.5).run()
    except ValueError as e:
        assert "CFL" in str(e)
    else:
        raise AssertionError("CFL violation accepted")


def test_round_trip_and_helpers():
    s = qdelay.Scenario.load(SCENARIOS / "fig4.json")
    assert qdelay.Scenario.from_json(s.to_json()).to_dict() == s.to_dict()
    assert math.isclose(qdelay.quantize(0.26, 2.0, 0.1), 0.3)
    assert qdelay.quantize(0.05, 2.0, 0.1) == 0.0
    assert qdelay.quantize(5.0, 2.0, 0.1) == 2.0
    assert qdelay.quantize(5.0, 2.0, 0.1, mu=10.0) == 5.0
    e = qdelay.mat_exp([[0.0, 1.0], [0.0, 0.0]], 2.0)
    assert e == [[1.0, 2.0], [0.0, 1.0]]


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
