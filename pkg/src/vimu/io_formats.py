"""File formats: rig and scenario YAML, CSV tables, JSON reports.

Units are fixed throughout: seconds, metres, radians, rad/s and m/s^2.
Every float is written with 17 significant digits, so a write/read cycle
returns the exact same doubles. All writers replace the target file
atomically.

Rig files look like::

    target: [0.0, 0.0, 0.0]      # optional, defaults to the IMU centroid
    imus:
      - id: 1
        rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1]   # row-major, or
        # quaternion: [w, x, y, z]              # Hamilton
        position: [0.1, 0.0, 0.0]
        noise: {sigma_g: 0.005, sigma_a: 0.05, sigma_bg: 1.0e-5,
                sigma_ba: 1.0e-4, rate_hz: 100}
    camera: {focal: 458.0, ...}  # optional

IMU stream CSVs have the header ``t_s,imu_id,gx,gy,gz,ax,ay,az``; rows of
different IMUs may interleave but each IMU's timestamps must increase.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml
from numpy.typing import NDArray

from .fusion import NonMonotonicTimestamps
from .geometry import nearest_rotation, quat_to_rotation
from .imu_model import ImuExtrinsics, ImuStream, NoiseSpec
from .sim_world import CameraModel, GroundTruth, LandmarkObs

log = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-6
# rotations this close to orthonormal are kept bit-for-bit
EXACT_TOL = 1e-12

STREAM_HEADER = ("t_s", "imu_id", "gx", "gy", "gz", "ax", "ay", "az")
VIMU_HEADER = ("t_s", "gx", "gy", "gz", "ax", "ay", "az")
_ROT = tuple(f"c{i}{j}" for i in range(3) for j in range(3))
TRUTH_HEADER = ("t_s", *_ROT, "vx", "vy", "vz", "px", "py", "pz",
                "wx", "wy", "wz", "fx", "fy", "fz", "alx", "aly", "alz")
LANDMARK_HEADER = ("t_s", "u", "v", "lx", "ly", "lz", "sigma_px")
ESTIMATE_HEADER = ("t_s", *_ROT, "vx", "vy", "vz", "px", "py", "pz",
                   "bgx", "bgy", "bgz", "bax", "bay", "baz",
                   *(f"var{i}" for i in range(15)))
ERROR_HEADER = ("t_s", "rot_err", "pos_err")
REPORT_KEYS = ("config", "seeds", "rot_mae", "rot_rmse", "pos_mae", "pos_rmse",
               "fused_sigma", "weights_gyro", "weights_accel")


class ParseError(ValueError):
    """Malformed file; carries the 1-based ``line`` and ``column`` when known."""

    def __init__(self, path, message: str, line: int | None = None,
                 column: int | None = None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


class ValidationError(ValueError):
    """Well-formed file with invalid content."""


def fmt(x: float) -> str:
    return "%.17g" % x


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary sibling, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- tables


def _table_text(header: Sequence[str], rows: Iterable[Sequence[float]]) -> str:
    out = [",".join(header)]
    out.extend(",".join(fmt(x) for x in row) for row in rows)
    return "\n".join(out) + "\n"


def write_table(path, header: Sequence[str], data: NDArray[np.float64]) -> None:
    data = np.asarray(data, dtype=float).reshape(-1, len(header))
    atomic_write_text(path, _table_text(header, data.tolist()))


def _open_text(path) -> str:
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(path, f"cannot read file: {exc}") from exc


def _rows(path, header: Sequence[str]):
    """Yield ``(line_number, fields)`` for the body of a CSV with ``header``."""
    reader = csv.reader(io.StringIO(_open_text(path)))
    try:
        first = next(reader)
    except StopIteration:
        raise ParseError(path, "missing header row", line=1) from None
    if tuple(h.strip() for h in first) != tuple(header):
        raise ParseError(path, f"expected header {','.join(header)}", line=1, column=1)
    for fields in reader:
        if not fields:
            continue
        if len(fields) != len(header):
            raise ParseError(path, f"expected {len(header)} fields, got {len(fields)}",
                             line=reader.line_num)
        yield reader.line_num, fields


def _float(path, line: int, col: int, text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise ParseError(path, f"not a number: {text!r}", line=line, column=col) from None
    if not math.isfinite(x):
        raise ParseError(path, f"non-finite value {text!r}", line=line, column=col)
    return x


def read_table(path, header: Sequence[str]) -> NDArray[np.float64]:
    rows = [
        [_float(path, line, c + 1, f) for c, f in enumerate(fields)]
        for line, fields in _rows(path, header)
    ]
    return np.array(rows, dtype=float).reshape(-1, len(header))


# ---------------------------------------------------------------- streams


def write_stream(path, streams: Mapping[int, ImuStream]) -> None:
    """
    Write several IMU streams to one CSV, merged in time order.

    Rows with equal timestamps are ordered by IMU id.
    """
    rows = []
    for imu_id, s in sorted(streams.items()):
        for k in range(len(s)):
            rows.append((float(s.t[k]), int(imu_id), k))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = [",".join(STREAM_HEADER)]
    for t, imu_id, k in rows:
        s = streams[imu_id]
        vals = (*s.gyro[k].tolist(), *s.accel[k].tolist())
        lines.append(",".join((fmt(t), str(imu_id), *(fmt(x) for x in vals))))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_stream(path) -> dict[int, ImuStream]:
    """
    Read a multi-IMU stream CSV into one :class:`ImuStream` per id.

    Raises
    ------
    ParseError
        Bad header, field count, number or id.
    NonMonotonicTimestamps
        An IMU's timestamp does not exceed its previous one; the message
        names the offending line.
    """
    cols: dict[int, list[list[float]]] = {}
    last: dict[int, float] = {}
    for line, fields in _rows(path, STREAM_HEADER):
        try:
            imu_id = int(fields[1])
        except ValueError:
            raise ParseError(path, f"bad imu_id {fields[1]!r}", line=line, column=2) from None
        t = _float(path, line, 1, fields[0])
        if imu_id in last and t <= last[imu_id]:
            raise NonMonotonicTimestamps(
                f"{path}:{line}: timestamp {fields[0]} of IMU {imu_id} does not "
                f"increase (previous {fmt(last[imu_id])})"
            )
        last[imu_id] = t
        vals = [t] + [_float(path, line, c + 3, f) for c, f in enumerate(fields[2:])]
        cols.setdefault(imu_id, []).append(vals)
    out = {}
    for imu_id, rows in cols.items():
        a = np.array(rows)
        out[imu_id] = ImuStream(a[:, 0], a[:, 1:4], a[:, 4:7])
    return out


def write_vimu(path, stream: ImuStream) -> None:
    """Write a single fused stream (no id column)."""
    write_table(path, VIMU_HEADER, np.column_stack([stream.t, stream.gyro, stream.accel]))


def read_vimu(path) -> ImuStream:
    a = read_table(path, VIMU_HEADER)
    if len(a) > 1 and not np.all(np.diff(a[:, 0]) > 0.0):
        bad = int(np.argmax(np.diff(a[:, 0]) <= 0.0)) + 3
        raise NonMonotonicTimestamps(f"{path}:{bad}: timestamp does not increase")
    return ImuStream(a[:, 0], a[:, 1:4], a[:, 4:7])


# ---------------------------------------------------------------- other series


def write_ground_truth(path, gt: GroundTruth) -> None:
    n = len(gt.t)
    write_table(path, TRUTH_HEADER, np.column_stack([
        gt.t, gt.C.reshape(n, 9), gt.v, gt.p, gt.omega, gt.a_body, gt.alpha,
    ]))


def read_ground_truth(path, gravity=(0.0, 0.0, 9.81)) -> GroundTruth:
    a = read_table(path, TRUTH_HEADER)
    return GroundTruth(
        t=a[:, 0], C=a[:, 1:10].reshape(-1, 3, 3), v=a[:, 10:13], p=a[:, 13:16],
        omega=a[:, 16:19], a_body=a[:, 19:22], alpha=a[:, 22:25],
        gravity=np.asarray(gravity, dtype=float),
    )


def write_landmarks(path, obs: Sequence[LandmarkObs]) -> None:
    data = np.array([[o.t, *o.pixel, *o.landmark, o.cam_noise_sigma] for o in obs])
    write_table(path, LANDMARK_HEADER, data)


def read_landmarks(path) -> list[LandmarkObs]:
    a = read_table(path, LANDMARK_HEADER)
    return [LandmarkObs(float(r[0]), r[1:3].copy(), r[3:6].copy(), float(r[6])) for r in a]


def write_estimate(path, est) -> None:
    n = len(est.t)
    write_table(path, ESTIMATE_HEADER, np.column_stack([
        est.t, est.C.reshape(n, 9), est.v, est.p, est.b_g, est.b_a, est.cov_diag,
    ]))


def read_estimate(path):
    from .liekf import Estimate

    a = read_table(path, ESTIMATE_HEADER)
    return Estimate(
        t=a[:, 0], C=a[:, 1:10].reshape(-1, 3, 3), v=a[:, 10:13], p=a[:, 13:16],
        b_g=a[:, 16:19], b_a=a[:, 19:22], cov_diag=a[:, 22:37],
    )


def write_errors(path, errs) -> None:
    write_table(path, ERROR_HEADER, np.column_stack([errs.t, errs.rot, errs.pos]))


def read_errors(path):
    from .evalkit import ErrorSeries

    a = read_table(path, ERROR_HEADER)
    return ErrorSeries(a[:, 0], a[:, 1], a[:, 2])


# ---------------------------------------------------------------- YAML helpers


def _load_yaml(path) -> Any:
    text = _open_text(path)
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ParseError(path, str(exc.problem or exc), line=line, column=col) from None
    except yaml.YAMLError as exc:
        raise ParseError(path, str(exc)) from None


def _dump_yaml(path, doc: Any) -> None:
    atomic_write_text(path, yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def _num(value: Any, what: str) -> float:
    # YAML 1.1 reads "1e-05" as a string, so coerce explicitly
    if isinstance(value, bool):
        raise ValidationError(f"{what}: expected a number, got {value!r}")
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{what}: expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ValidationError(f"{what}: non-finite value {value!r}")
    return x


def _vec(value: Any, n: int, what: str) -> NDArray[np.float64]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ValidationError(f"{what}: expected a list of {n} numbers, got {value!r}")
    return np.array([_num(v, what) for v in value])


def _mapping(value: Any, what: str, allowed: Iterable[str]) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValidationError(f"{what}: expected a mapping, got {value!r}")
    unknown = set(value) - set(allowed)
    if unknown:
        raise ValidationError(f"{what}: unknown keys {sorted(map(str, unknown))}")
    return value


def _rotation(entry: dict, what: str) -> NDArray[np.float64]:
    if "rotation" in entry and "quaternion" in entry:
        raise ValidationError(f"{what}: give either rotation or quaternion, not both")
    if "quaternion" in entry:
        q = _vec(entry["quaternion"], 4, f"{what} quaternion")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > ORTHONORMAL_TOL:
            raise ValidationError(f"{what}: quaternion norm {norm} is not 1")
        return quat_to_rotation(q)
    if "rotation" not in entry:
        return np.eye(3)
    C = _vec(entry["rotation"], 9, f"{what} rotation").reshape(3, 3)
    dev = float(np.max(np.abs(C @ C.T - np.eye(3))))
    if dev > ORTHONORMAL_TOL or np.linalg.det(C) <= 0.0:
        raise ValidationError(
            f"{what}: rotation is not orthonormal (max |C C^T - I| = {dev:.3g}, "
            f"det = {np.linalg.det(C):.6g})"
        )
    if dev > EXACT_TOL:
        R = nearest_rotation(C)
        log.info("%s: re-projected rotation, Frobenius correction %.3g",
                 what, float(np.linalg.norm(R - C)))
        C = R
    return C


def _noise(value: Any, what: str) -> NoiseSpec:
    names = [f.name for f in dataclasses.fields(NoiseSpec)]
    d = _mapping(value, f"{what} noise", names)
    try:
        return NoiseSpec(**{k: _num(v, f"{what} noise {k}") for k, v in d.items()})
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{what} noise: {exc}") from None


def _noise_doc(spec: NoiseSpec) -> dict:
    return {f.name: float(getattr(spec, f.name)) for f in dataclasses.fields(NoiseSpec)}


_CAMERA_SCALARS = ("width", "height", "focal", "cx", "cy", "sigma_px",
                   "landmarks_per_frame", "depth_min", "depth_max")
_INT_FIELDS = ("width", "height", "landmarks_per_frame")


def _camera(value: Any) -> CameraModel:
    d = _mapping(value, "camera", (*_CAMERA_SCALARS, "rotation", "quaternion", "position"))
    kw: dict[str, Any] = {}
    for k in _CAMERA_SCALARS:
        if k in d:
            x = _num(d[k], f"camera {k}")
            if k in _INT_FIELDS:
                if x != int(x) or x <= 0:
                    raise ValidationError(f"camera {k}: expected a positive integer")
                x = int(x)
            kw[k] = x
    kw["C_vc"] = _rotation(d, "camera")
    if "position" in d:
        kw["r_vc"] = _vec(d["position"], 3, "camera position")
    return CameraModel(**kw)


def _camera_doc(cam: CameraModel) -> dict:
    doc: dict[str, Any] = {}
    for k in _CAMERA_SCALARS:
        v = getattr(cam, k)
        doc[k] = int(v) if k in _INT_FIELDS else float(v)
    doc["rotation"] = [float(x) for x in np.asarray(cam.C_vc).ravel()]
    doc["position"] = [float(x) for x in np.asarray(cam.r_vc)]
    return doc


# ---------------------------------------------------------------- rigs


@dataclass
class RigConfig:
    """
    Contents of a rig file. Positions are in the rig reference frame, not
    yet shifted to the target.
    """

    ids: list[int]
    extrinsics: list[ImuExtrinsics]
    noises: list[NoiseSpec]
    target: NDArray[np.float64]
    camera: CameraModel | None = None

    def __post_init__(self) -> None:
        if not (len(self.ids) == len(self.extrinsics) == len(self.noises)):
            raise ValidationError("ids, extrinsics and noises differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError(f"duplicate IMU ids in {self.ids}")
        self.target = np.asarray(self.target, dtype=float).reshape(3)

    def centered(self) -> list[ImuExtrinsics]:
        """Extrinsics with positions measured from the target."""
        return [ImuExtrinsics(e.C, e.r - self.target) for e in self.extrinsics]


def read_rig(path) -> RigConfig:
    doc = _load_yaml(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a mapping at top level")
    doc = _mapping(doc, "rig", ("imus", "camera", "target"))
    entries = doc.get("imus")
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: 'imus' must be a non-empty list")

    ids, exts, noises = [], [], []
    for n, entry in enumerate(entries):
        if not isinstance(entry, dict) or "id" not in entry:
            raise ValidationError(f"imus[{n}]: expected a mapping with an 'id'")
        raw_id = entry["id"]
        if isinstance(raw_id, bool) or not isinstance(raw_id, int):
            raise ValidationError(f"imus[{n}]: id must be an integer, got {raw_id!r}")
        what = f"IMU {raw_id}"
        if raw_id in ids:
            raise ValidationError(f"{what}: duplicate id")
        _mapping(entry, what, ("id", "rotation", "quaternion", "position", "noise"))
        C = _rotation(entry, what)
        r = _vec(entry.get("position", [0.0, 0.0, 0.0]), 3, f"{what} position")
        ids.append(raw_id)
        exts.append(ImuExtrinsics(C, r))
        noises.append(_noise(entry.get("noise"), what))

    if doc.get("target") is None:
        target = np.mean([e.r for e in exts], axis=0)
    else:
        target = _vec(doc["target"], 3, "target")
    camera = _camera(doc["camera"]) if "camera" in doc else None
    return RigConfig(ids, exts, noises, target, camera)


def load_rig(path) -> tuple[list[ImuExtrinsics], list[NoiseSpec], NDArray[np.float64]]:
    """
    Load a rig file for fusion.

    Returns the extrinsics with positions measured from the target, the
    noise specs and the target itself (rig frame). A missing target means
    the centroid of the IMU positions.
    """
    rig = read_rig(path)
    return rig.centered(), rig.noises, rig.target


def write_rig(path, rig: RigConfig) -> None:
    doc: dict[str, Any] = {"target": [float(x) for x in rig.target], "imus": []}
    for imu_id, e, s in zip(rig.ids, rig.extrinsics, rig.noises):
        doc["imus"].append({
            "id": int(imu_id),
            "rotation": [float(x) for x in e.C.ravel()],
            "position": [float(x) for x in e.r],
            "noise": _noise_doc(s),
        })
    if rig.camera is not None:
        doc["camera"] = _camera_doc(rig.camera)
    _dump_yaml(path, doc)


# ---------------------------------------------------------------- scenarios


def read_scenario(path):
    """Read a scenario YAML; absent keys keep the :class:`Scenario` defaults."""
    from .evalkit import Scenario

    doc = _load_yaml(path)
    if doc is None:
        doc = {}
    names = [f.name for f in dataclasses.fields(Scenario)]
    d = _mapping(doc, "scenario", names)
    kw: dict[str, Any] = {}
    for k, v in d.items():
        if k == "noise":
            kw[k] = _noise(v, "scenario")
        elif k == "camera":
            kw[k] = _camera(v)
        elif k == "gyro_weights":
            if v not in ("noise", "placement"):
                raise ValidationError("gyro_weights must be 'noise' or 'placement'")
            kw[k] = v
        elif k in ("turn_on_bias", "imu_perturb"):
            kw[k] = tuple(_vec(v, 2, k).tolist())
        elif k == "init_sigma":
            kw[k] = tuple(_vec(v, 3, k).tolist())
        elif k == "rig_seed":
            x = _num(v, k)
            if x != int(x):
                raise ValidationError("rig_seed must be an integer")
            kw[k] = int(x)
        else:
            kw[k] = _num(v, k)
    try:
        return Scenario(**kw)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_scenario(path, scenario) -> None:
    doc: dict[str, Any] = {}
    for f in dataclasses.fields(scenario):
        v = getattr(scenario, f.name)
        if f.name == "noise":
            v = _noise_doc(v)
        elif f.name == "camera":
            v = _camera_doc(v)
        elif isinstance(v, tuple):
            v = [float(x) for x in v]
        elif isinstance(v, (int, str)):
            pass
        else:
            v = float(v)
        doc[f.name] = v
    _dump_yaml(path, doc)


# ---------------------------------------------------------------- reports


@dataclass
class Report:
    """
    Mean metrics of one configuration over its seeds, plus the fusion
    weights and fused white-noise sigmas.
    """

    config: str
    seeds: list[int]
    rot_mae: float
    rot_rmse: float
    pos_mae: float
    pos_rmse: float
    fused_sigma: dict[str, float]
    weights_gyro: list[float]
    weights_accel: list[float]
    extra: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in REPORT_KEYS}
        d.update(self.extra)
        return d


def report_text(reports: Report | Sequence[Report]) -> str:
    if isinstance(reports, Report):
        doc: Any = reports.as_dict()
    else:
        doc = [r.as_dict() for r in reports]
    # repr floats round-trip exactly; no timestamps, so output is reproducible
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_report(path, reports: Report | Sequence[Report]) -> None:
    atomic_write_text(path, report_text(reports))


def read_report(path) -> Report | list[Report]:
    try:
        doc = json.loads(_open_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, line=exc.lineno, column=exc.colno) from None

    def one(d: Any) -> Report:
        if not isinstance(d, dict) or any(k not in d for k in REPORT_KEYS):
            raise ValidationError(f"{path}: report objects need keys {list(REPORT_KEYS)}")
        extra = {k: v for k, v in d.items() if k not in REPORT_KEYS}
        return Report(**{k: d[k] for k in REPORT_KEYS}, extra=extra)

    if isinstance(doc, list):
        return [one(d) for d in doc]
    return one(doc)
