import json
import logging

import numpy as np
import pytest
import yaml

from vimu.evalkit import ErrorSeries, Scenario
from vimu.fusion import NonMonotonicTimestamps
from vimu.geometry import random_rotation, so3_exp
from vimu.imu_model import ImuExtrinsics, ImuStream, NoiseSpec
from vimu.io_formats import (
    REPORT_KEYS,
    STREAM_HEADER,
    ParseError,
    Report,
    RigConfig,
    ValidationError,
    load_rig,
    read_errors,
    read_ground_truth,
    read_landmarks,
    read_report,
    read_rig,
    read_scenario,
    read_stream,
    read_vimu,
    write_errors,
    write_ground_truth,
    write_landmarks,
    write_report,
    write_rig,
    write_scenario,
    write_stream,
    write_vimu,
)
from vimu.sim_world import CameraModel, default_trajectory, generate_ground_truth, synth_landmark_obs


def random_stream(rng, n, t0=0.0):
    t = t0 + np.cumsum(rng.uniform(1e-4, 0.02, n))
    return ImuStream(t, rng.normal(0, 1, (n, 3)) * 10.0 ** rng.integers(-8, 3, (n, 1)),
                     rng.normal(0, 10, (n, 3)))


def test_stream_round_trip_exact(rng, tmp_path):
    streams = {3: random_stream(rng, 50_000), 11: random_stream(rng, 50_000)}
    path = tmp_path / "s.csv"
    write_stream(path, streams)
    back = read_stream(path)
    assert sorted(back) == [3, 11]
    for k, s in streams.items():
        np.testing.assert_array_equal(back[k].t, s.t)
        np.testing.assert_array_equal(back[k].gyro, s.gyro)
        np.testing.assert_array_equal(back[k].accel, s.accel)


def test_stream_rows_time_ordered(tmp_path):
    streams = {2: ImuStream([0.0, 0.2], np.zeros((2, 3)), np.zeros((2, 3))),
               1: ImuStream([0.0, 0.1], np.ones((2, 3)), np.ones((2, 3)))}
    write_stream(tmp_path / "s.csv", streams)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(STREAM_HEADER)
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["0", "1"], ["0", "2"], ["0.10000000000000001", "1"],
                                                       ["0.20000000000000001", "2"]]


def test_stream_empty_body(tmp_path):
    (tmp_path / "s.csv").write_text(",".join(STREAM_HEADER) + "\n")
    assert read_stream(tmp_path / "s.csv") == {}


def test_stream_out_of_order_names_line(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text(",".join(STREAM_HEADER) + "\n0.1,0,0,0,0,0,0,0\n0.2,1,0,0,0,0,0,0\n0.1,0,0,0,0,0,0,0\n")
    with pytest.raises(NonMonotonicTimestamps, match=":4:"):
        read_stream(path)


@pytest.mark.parametrize("body, line, column", [
    ("0.1,0,0,0,x,0,0,0", 2, 5),
    ("0.1,0,0,0,0,0,0", 2, None),
    ("0.1,a,0,0,0,0,0,0", 2, 2),
    ("0.1,0,0,0,0,0,nan,0", 2, 7),
])
def test_stream_parse_errors(tmp_path, body, line, column):
    path = tmp_path / "s.csv"
    path.write_text(",".join(STREAM_HEADER) + "\n" + body + "\n")
    with pytest.raises(ParseError) as info:
        read_stream(path)
    assert info.value.line == line
    assert info.value.column == column


def test_bad_header(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("t,gx\n")
    with pytest.raises(ParseError) as info:
        read_stream(path)
    assert info.value.line == 1


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_stream(tmp_path / "nope.csv")


def test_vimu_round_trip(rng, tmp_path):
    s = random_stream(rng, 1000)
    write_vimu(tmp_path / "v.csv", s)
    back = read_vimu(tmp_path / "v.csv")
    for a in ("t", "gyro", "accel"):
        np.testing.assert_array_equal(getattr(back, a), getattr(s, a))


def test_vimu_non_monotonic(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("t_s,gx,gy,gz,ax,ay,az\n0,0,0,0,0,0,0\n1,0,0,0,0,0,0\n1,0,0,0,0,0,0\n")
    with pytest.raises(NonMonotonicTimestamps, match=":4:"):
        read_vimu(path)


def test_series_round_trips(tmp_path):
    gt = generate_ground_truth(default_trajectory(3.0))
    write_ground_truth(tmp_path / "gt.csv", gt)
    back = read_ground_truth(tmp_path / "gt.csv")
    for a in ("t", "C", "v", "p", "omega", "a_body", "alpha"):
        np.testing.assert_array_equal(getattr(back, a), getattr(gt, a))
    obs = synth_landmark_obs(gt, CameraModel(), 2.0, seed=1)
    write_landmarks(tmp_path / "lm.csv", obs)
    lm = read_landmarks(tmp_path / "lm.csv")
    assert len(lm) == len(obs)
    assert all(a.t == b.t and a.cam_noise_sigma == b.cam_noise_sigma
               and np.array_equal(a.pixel, b.pixel) and np.array_equal(a.landmark, b.landmark)
               for a, b in zip(lm, obs))
    errs = ErrorSeries(gt.t, np.abs(gt.v[:, 0]), np.abs(gt.p[:, 1]))
    write_errors(tmp_path / "e.csv", errs)
    e2 = read_errors(tmp_path / "e.csv")
    np.testing.assert_array_equal(e2.rot, errs.rot)
    np.testing.assert_array_equal(e2.pos, errs.pos)


def random_rig(rng, n, target=None, camera=None):
    ids = list(rng.choice(100, n, replace=False).tolist())
    ext = [ImuExtrinsics(random_rotation(rng), rng.normal(0, 1, 3)) for _ in range(n)]
    noises = [NoiseSpec(*rng.uniform(1e-5, 1e-1, 4), rate_hz=float(rng.integers(50, 1000)))
              for _ in range(n)]
    t = rng.normal(size=3) if target is None else target
    return RigConfig(ids, ext, noises, t, camera)


@pytest.mark.parametrize("n", [1, 4, 16])
def test_rig_round_trip_exact(rng, tmp_path, n):
    rig = random_rig(rng, n, camera=CameraModel(sigma_px=0.7) if n == 4 else None)
    write_rig(tmp_path / "rig.yaml", rig)
    back = read_rig(tmp_path / "rig.yaml")
    assert back.ids == rig.ids
    np.testing.assert_array_equal(back.target, rig.target)
    for a, b in zip(back.extrinsics, rig.extrinsics):
        np.testing.assert_array_equal(a.C, b.C)
        np.testing.assert_array_equal(a.r, b.r)
    assert back.noises == rig.noises
    assert (back.camera is None) == (rig.camera is None)
    if rig.camera is not None:
        assert back.camera.sigma_px == 0.7


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def test_single_imu_target_defaults_to_its_position(tmp_path):
    path = write_yaml(tmp_path / "r.yaml", {"imus": [{"id": 4, "position": [1, 2, 3]}]})
    ext, noises, target = load_rig(path)
    np.testing.assert_array_equal(target, [1, 2, 3])
    np.testing.assert_array_equal(ext[0].r, 0.0)
    assert noises == [NoiseSpec()]


def test_positions_recentred_on_target(tmp_path):
    doc = {"target": [1, 0, 0], "imus": [{"id": 1, "position": [2, 0, 0]},
                                         {"id": 2, "position": [0, 1, 0]}]}
    ext, _, target = load_rig(write_yaml(tmp_path / "r.yaml", doc))
    np.testing.assert_array_equal(ext[0].r, [1, 0, 0])
    np.testing.assert_array_equal(ext[1].r, [-1, 1, 0])
    doc.pop("target")
    ext, _, target = load_rig(write_yaml(tmp_path / "r.yaml", doc))
    np.testing.assert_allclose(target, [1, 0.5, 0])
    np.testing.assert_allclose(ext[0].r + ext[1].r, 0.0)


def test_quaternion_input(rng, tmp_path):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    C = so3_exp(1.3 * axis)
    q = [np.cos(0.65), *(np.sin(0.65) * axis)]
    doc = {"imus": [{"id": 0, "quaternion": [float(x) for x in q]}]}
    rig = read_rig(write_yaml(tmp_path / "r.yaml", doc))
    np.testing.assert_allclose(rig.extrinsics[0].C, C, atol=1e-14)


def test_string_numbers_accepted(tmp_path):
    doc = {"imus": [{"id": 0, "noise": {"sigma_g": "1e-05"}}]}
    rig = read_rig(write_yaml(tmp_path / "r.yaml", doc))
    assert rig.noises[0].sigma_g == 1e-5


def test_slightly_off_rotation_reprojected(tmp_path, caplog):
    C = np.eye(3)
    C[0, 1] = 1e-8
    doc = {"imus": [{"id": 7, "rotation": C.ravel().tolist()}]}
    with caplog.at_level(logging.INFO, logger="vimu.io_formats"):
        rig = read_rig(write_yaml(tmp_path / "r.yaml", doc))
    assert "IMU 7" in caplog.text and "Frobenius" in caplog.text
    R = rig.extrinsics[0].C
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)


@pytest.mark.parametrize("entry, needle", [
    ({"id": 5, "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 2]}, "IMU 5"),
    ({"id": 5, "rotation": [1, 0, 0, 0, 1, 0, 0, 0, -1]}, "IMU 5"),
    ({"id": 5, "quaternion": [1, 1, 0, 0]}, "IMU 5"),
    ({"id": 5, "position": [1, 2]}, "IMU 5 position"),
    ({"id": 5, "noise": {"sigma_g": -1.0}}, "IMU 5 noise"),
    ({"id": 5, "noise": {"sigma_x": 1.0}}, "unknown keys"),
    ({"id": 5, "colour": "red"}, "unknown keys"),
    ({"id": "five"}, "id must be an integer"),
])
def test_rig_validation_names_imu(tmp_path, entry, needle):
    with pytest.raises(ValidationError, match=needle):
        read_rig(write_yaml(tmp_path / "r.yaml", {"imus": [entry]}))


def test_duplicate_ids(tmp_path):
    with pytest.raises(ValidationError, match="duplicate"):
        read_rig(write_yaml(tmp_path / "r.yaml", {"imus": [{"id": 1}, {"id": 1}]}))
    with pytest.raises(ValidationError):
        RigConfig([1, 1], [ImuExtrinsics()] * 2, [NoiseSpec()] * 2, np.zeros(3))


def test_yaml_syntax_error_location(tmp_path):
    path = tmp_path / "r.yaml"
    path.write_text("imus:\n  - id: 1\n    position: [1, 2\n")
    with pytest.raises(ParseError) as info:
        read_rig(path)
    assert info.value.line is not None


def test_scenario_round_trip(tmp_path):
    sc = Scenario(duration=33.0, rig_seed=4, gyro_weights="noise",
                  noise=NoiseSpec(0.002, 0.03, 1e-6, 1e-5, 200.0))
    write_scenario(tmp_path / "sc.yaml", sc)
    back = read_scenario(tmp_path / "sc.yaml")
    for name in ("duration", "rig_seed", "gyro_weights", "noise", "turn_on_bias", "imu_perturb"):
        assert getattr(back, name) == getattr(sc, name)
    np.testing.assert_array_equal(back.camera.C_vc, sc.camera.C_vc)


def test_scenario_partial_and_invalid(tmp_path):
    sc = read_scenario(write_yaml(tmp_path / "sc.yaml", {"duration": 10}))
    assert sc.duration == 10.0 and sc.imu_rate_hz == Scenario().imu_rate_hz
    with pytest.raises(ValidationError):
        read_scenario(write_yaml(tmp_path / "sc.yaml", {"gyro_weights": "magic"}))
    with pytest.raises(ValidationError):
        read_scenario(write_yaml(tmp_path / "sc.yaml", {"durration": 10}))


def test_report_schema_round_trip(tmp_path):
    rep = Report("S4", [0, 1], 1e-3, 1.1e-3, 5e-3, 6e-3, {"gyro": 0.0025, "accel": 0.025},
                 [0.25] * 4, [0.25] * 4, extra={"note": "x"})
    write_report(tmp_path / "r.json", [rep])
    doc = json.loads((tmp_path / "r.json").read_text())
    assert list(doc[0])[: len(REPORT_KEYS)] == list(REPORT_KEYS)
    assert read_report(tmp_path / "r.json") == [rep]


def test_report_errors(tmp_path):
    (tmp_path / "r.json").write_text("{\n  \"config\": \n")
    with pytest.raises(ParseError) as info:
        read_report(tmp_path / "r.json")
    assert info.value.line == 3
    (tmp_path / "r.json").write_text('{"config": "S0"}')
    with pytest.raises(ValidationError):
        read_report(tmp_path / "r.json")
