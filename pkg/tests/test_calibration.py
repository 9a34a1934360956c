import pytest
import yaml

from conftest import CONFIGS, point_config
from vaporpairs import biphoton, calibration, detection
from vaporpairs.errors import ConfigError


def anchors_from(truth):
    """Anchor set in the published layout, generated by the simulator itself."""
    out = []
    for pc in (27e-3, 9e-3, 1e-3):
        c = truth.with_values(**{"lasers.coupling_power": pc})
        _, wf, m = biphoton.simulate(c)
        out.append(calibration.Anchor("one_over_e_time", 6e-3, pc, m.one_over_e_time))
        if pc == 27e-3:
            out.append(calibration.Anchor("g2_max", 6e-3, pc, detection.predicted_g2_max(c, wf, m.pair_rate)))
    _, _, m = biphoton.simulate(truth.with_values(**{"lasers.pump_power": 7e-3}))
    out.append(calibration.Anchor("pair_rate", 7e-3, 27e-3, m.pair_rate))
    return out


def test_self_consistent_recovery():
    start = point_config("a1")
    truth = start.with_values(**{
        "cell.ground_decoherence_rate": start.cell.ground_decoherence_rate * 1.3,
        "species.coupling_dipole": start.species.coupling_dipole * 0.9,
        "noise.raman_background_as": start.noise.raman_background_as * 0.6,
        "calibration.rate_constant": start.calibration.rate_constant * 1.5,
    })
    r = calibration.calibrate(start, anchors_from(truth))
    assert r.converged
    assert r.effective_density == pytest.approx(truth.density, rel=0.05)
    assert r.gamma12 == pytest.approx(truth.cell.ground_decoherence_rate, rel=0.05)
    assert r.coupling_dipole == pytest.approx(truth.species.coupling_dipole, rel=0.05)
    assert r.raman_background_as == pytest.approx(truth.noise.raman_background_as, rel=0.05)
    assert r.rate_constant == pytest.approx(truth.calibration.rate_constant, rel=0.05)
    assert all(abs(x["relative"]) < 1e-3 for x in r.residuals)


def test_underdetermined():
    one = calibration.load_anchors()[:1]
    with pytest.raises(ConfigError, match="underdetermined"):
        calibration.calibrate(point_config("a1", calibrated=False), one)


def test_shipped_overlay_matches_fresh_fit():
    r = calibration.calibrate(point_config("a1", calibrated=False), calibration.load_anchors())
    shipped = yaml.safe_load((CONFIGS / "calibrated.yaml").read_text())
    fresh = r.overlay()
    assert fresh["density_override"] == pytest.approx(shipped["density_override"], rel=1e-6)
    for section in ("cell", "species", "noise", "calibration"):
        for k, v in shipped[section].items():
            assert fresh[section][k] == pytest.approx(v, rel=1e-6)


def test_published_residuals_reported():
    r = calibration.calibrate(point_config("a1", calibrated=False), calibration.load_anchors())
    assert len(r.residuals) == 7
    by = {(x["kind"], round(x["coupling_power"] * 1e3)): x for x in r.residuals}
    assert by[("pair_rate", 27)]["model"] == pytest.approx(2000.0, rel=1e-9)
    assert by[("g2_max", 27)]["model"] == pytest.approx(11.0, rel=1e-4)
    for pc, target in ((27, 47e-9), (9, 60e-9), (1, 94e-9)):
        assert by[("one_over_e_time", pc)]["model"] == pytest.approx(target, rel=0.25)


def test_apply_and_overlay_agree():
    r = calibration.calibrate(point_config("a1", calibrated=False), calibration.load_anchors())
    a = r.apply(point_config("a1", calibrated=False))
    assert a == point_config("a1")


def test_write_overlay(tmp_path):
    r = calibration.CalibrationResult(1e16, 6e6, 6e-30, 1e6, 1e-7, [], True)
    calibration.write_overlay(tmp_path / "o.yaml", r)
    text = (tmp_path / "o.yaml").read_text()
    assert text.startswith("# fitted")
    assert yaml.safe_load(text) == r.overlay()


def test_anchor_file_roundtrip():
    shipped = calibration.load_anchors(CONFIGS / "anchors.yaml")
    assert shipped == calibration.load_anchors()
    assert [a.weight for a in shipped].count(0) == 2


@pytest.mark.parametrize("doc,match", [
    ({"nope": 1}, "list"),
    ([{"kind": "bogus", "pump_power": 1, "coupling_power": 1, "value": 1}], "kind"),
    ([{"kind": "g2_max", "pump_power": "6 mW", "value": 11}], "missing"),
    ([{"kind": "g2_max", "pump_power": "6 mW", "coupling_power": "1 mW", "value": 11, "x": 1}], "unknown"),
    ([{"kind": "one_over_e_time", "pump_power": "6 mW", "coupling_power": "1 mW", "value": "5 mW"}], "unit"),
    ([{"kind": "g2_max", "pump_power": "6 mW", "coupling_power": "1 mW", "value": 11, "weight": -1}], "weight"),
])
def test_anchor_errors(doc, match):
    with pytest.raises(ConfigError, match=match):
        calibration.parse_anchors(doc)
