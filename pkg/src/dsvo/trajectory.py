"""Trajectory I/O, Umeyama alignment, and APE/RPE evaluation.

Trajectory files are plain text, one record per line:
``timestamp tx ty tz qx qy qz qw`` (quaternion w-last), space separated,
with ``#`` comment lines. Records are stored as parsed, so a read/write
round trip is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose

_FMT = "{:.9f} {:.9f} {:.9f} {:.9f} {:.9f} {:.9f} {:.9f} {:.9f}\n"


class EvaluationError(ValueError):
    pass


@dataclass
class Trajectory:
    timestamps: np.ndarray  # (n,)
    positions: np.ndarray  # (n, 3)
    quaternions: np.ndarray  # (n, 4) xyzw

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, float).reshape(-1)
        self.positions = np.asarray(self.positions, float).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, float).reshape(-1, 4)
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must strictly increase")

    def __len__(self):
        return len(self.timestamps)

    @staticmethod
    def from_poses(timestamps, poses: list[Pose]) -> "Trajectory":
        q = Rotation.from_matrix([p.R for p in poses]).as_quat().reshape(-1, 4)
        # canonical sign: w >= 0
        q = np.where(q[:, 3:4] < 0, -q, q)
        return Trajectory(timestamps, np.array([p.t for p in poses]), q)

    def pose(self, i: int) -> Pose:
        R = Rotation.from_quat(self.quaternions[i]).as_matrix()
        return Pose(R, self.positions[i])

    def rotations(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternions).as_matrix()

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))

    def write(self, path: str):
        with open(path, "w") as f:
            f.write("# timestamp tx ty tz qx qy qz qw\n")
            for i in range(len(self)):
                f.write(
                    _FMT.format(
                        self.timestamps[i], *self.positions[i], *self.quaternions[i]
                    )
                )

    @staticmethod
    def read(path: str) -> "Trajectory":
        ts, pos, quat = [], [], []
        with open(path) as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                vals = [float(x) for x in line.split()]
                if len(vals) != 8:
                    raise ValueError(f"expected 8 fields per record, got {len(vals)}")
                ts.append(vals[0])
                pos.append(vals[1:4])
                quat.append(vals[4:8])
        return Trajectory(np.array(ts), np.array(pos), np.array(quat))


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Least-squares similarity transform mapping src points onto dst.

    Returns (s, R, t) with dst ~ s R src + t.
    """
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    U, d, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = np.mean(np.sum(xs * xs, axis=1))
        s = float(np.trace(np.diag(d) @ S) / var_s) if var_s > 0 else 1.0
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def _associate(est: Trajectory, gt: Trajectory):
    """Nearest-neighbor timestamp matching within half a frame interval."""
    if len(gt) >= 2:
        max_dt = 0.5 * float(np.median(np.diff(gt.timestamps)))
    else:
        max_dt = np.inf
    je = np.searchsorted(gt.timestamps, est.timestamps)
    pairs = []
    for i, t in enumerate(est.timestamps):
        cands = [j for j in (je[i] - 1, je[i]) if 0 <= j < len(gt)]
        if not cands:
            continue
        j = min(cands, key=lambda j: abs(gt.timestamps[j] - t))
        if abs(gt.timestamps[j] - t) <= max_dt:
            pairs.append((i, j))
    return pairs


@dataclass
class EvalReport:
    ape_trans_pct: float
    ape_rot_deg: float
    rpe_trans_pct: float
    rpe_rot_deg: float
    length_m: float
    matched_fraction: float
    scale: float = 1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _rot_angle_deg(R: np.ndarray) -> float:
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def evaluate(
    est: Trajectory,
    gt: Trajectory,
    align: bool = True,
    with_scale: bool = False,
) -> EvalReport:
    """APE/RPE with optional Umeyama pre-alignment.

    Translational metrics are RMSE divided by the ground-truth path length
    (percent); rotational metrics are RMSE in degrees. ``with_scale``
    estimates a similarity (mono mode); otherwise scale is fixed at 1.
    """
    pairs = _associate(est, gt)
    if len(pairs) < 2:
        raise EvaluationError("fewer than 2 timestamp-matched pose pairs")
    ie = [p[0] for p in pairs]
    ig = [p[1] for p in pairs]
    pe = est.positions[ie]
    pg = gt.positions[ig]
    Re = est.rotations()[ie]
    Rg = gt.rotations()[ig]

    s, R, t = (1.0, np.eye(3), np.zeros(3))
    if align:
        s, R, t = umeyama(pe, pg, with_scale=with_scale)
    pa = s * pe @ R.T + t
    Ra = np.einsum("ij,njk->nik", R, Re)

    length = gt.path_length()
    if length <= 0:
        length = 1.0

    ape_t = float(np.sqrt(np.mean(np.sum((pa - pg) ** 2, axis=1))))
    ang = [_rot_angle_deg(Rg[i].T @ Ra[i]) for i in range(len(pairs))]
    ape_r = float(np.sqrt(np.mean(np.square(ang))))

    dts, drs = [], []
    for a, b in zip(range(len(pairs) - 1), range(1, len(pairs))):
        dg_t = Rg[a].T @ (pg[b] - pg[a])
        de_t = Ra[a].T @ (pa[b] - pa[a])
        dts.append(np.linalg.norm(dg_t - de_t))
        dg_R = Rg[a].T @ Rg[b]
        de_R = Ra[a].T @ Ra[b]
        drs.append(_rot_angle_deg(dg_R.T @ de_R))
    rpe_t = float(np.sqrt(np.mean(np.square(dts))))
    rpe_r = float(np.sqrt(np.mean(np.square(drs))))

    return EvalReport(
        ape_trans_pct=100.0 * ape_t / length,
        ape_rot_deg=ape_r,
        rpe_trans_pct=100.0 * rpe_t / length,
        rpe_rot_deg=rpe_r,
        length_m=length,
        matched_fraction=len(pairs) / len(est),
        scale=s,
    )
