"""Evaluation metric suites: depth error, temporal warping, and lighting.

Depth metrics are computed in meters over the pixels valid in both maps,
with no scale alignment: scale errors are exactly what the occlusion and
placement tasks surface, so hiding them behind median alignment would
defeat the comparison.

The temporal metric averages flow-warped frame-to-frame depth differences:

    opw = 1/(N-1) * sum over consecutive pairs of L(n, n-1)

where L is the masked mean absolute difference between frame n and frame
n-1 warped toward it. Lower is smoother.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import ArbenchError, DepthMap, EnvironmentMap, resize_nearest
from .lighting import ProbeMaterial, ProbeRender, render_probe


class MetricError(ArbenchError):
    code = "MetricError"


class DimensionMismatch(MetricError):
    code = "DimensionMismatch"


class NoValidPixels(MetricError):
    code = "NoValidPixels"


class TooFewFrames(MetricError):
    code = "TooFewFrames"


class DegenerateInput(MetricError):
    code = "DegenerateInput"


DEPTH_METRIC_IDS = ("rmse", "mse", "absrel", "delta1", "delta2", "delta3")
LIGHTING_TARGETS = ("env_map", "diffuse", "matte", "mirror")
LIGHTING_METRIC_PARTS = {
    f"{target}_{name}": (target, name)
    for target in LIGHTING_TARGETS
    for name in ("angular", "si_rmse", "rmse")
}
LIGHTING_METRIC_IDS = tuple(LIGHTING_METRIC_PARTS)
REGISTERED_METRIC_IDS = DEPTH_METRIC_IDS + ("opw",) + LIGHTING_METRIC_IDS


@dataclass(frozen=True)
class DepthMetricReport:
    frame_index: int
    valid_pixel_count: int
    rmse: float
    mse: float
    absrel: float
    delta1: float
    delta2: float
    delta3: float

    def value(self, metric_id):
        return getattr(self, metric_id)


@dataclass(frozen=True)
class TemporalReport:
    frame_count: int
    pair_losses: tuple
    opw: float


@dataclass(frozen=True)
class FlowField:
    """Backward flow from frame n to n-1: target pixel = p + (du, dv)."""

    du: np.ndarray
    dv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.du.shape == self.dv.shape == self.valid.shape):
            raise DimensionMismatch("flow component shapes differ")

    @property
    def width(self):
        return self.du.shape[1]

    @property
    def height(self):
        return self.du.shape[0]

    @classmethod
    def zero(cls, width, height):
        shape = (height, width)
        return cls(
            du=np.zeros(shape, dtype=np.float32),
            dv=np.zeros(shape, dtype=np.float32),
            valid=np.ones(shape, dtype=bool),
        )


@dataclass(frozen=True)
class LightingMetricReport:
    target: str
    angular_error_deg: float
    si_rmse: float
    rmse: float

    def value(self, name):
        return {"angular": self.angular_error_deg, "si_rmse": self.si_rmse, "rmse": self.rmse}[name]


def depth_metrics(pred: DepthMap, gt: DepthMap, frame_index=0) -> DepthMetricReport:
    """RMSE/MSE/AbsRel and the delta threshold accuracies, in meters.

    delta_i is the fraction of valid pixels with max(pred/gt, gt/pred)
    < 1.25**i, so delta1 <= delta2 <= delta3 by construction.
    """
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise DimensionMismatch(
            f"pred {pred.width}x{pred.height} vs gt {gt.width}x{gt.height}"
        )
    valid = pred.valid_mask() & gt.valid_mask()
    count = int(valid.sum())
    if count == 0:
        raise NoValidPixels("no pixel is valid in both maps")
    p = pred.to_meters()[valid]
    g = gt.to_meters()[valid]
    diff = p - g
    mse = float(np.mean(diff * diff))
    absrel = float(np.mean(np.abs(diff) / g))
    ratio = np.maximum(p / g, g / p)
    deltas = [float(np.mean(ratio < 1.25**i)) for i in (1, 2, 3)]
    return DepthMetricReport(
        frame_index=frame_index,
        valid_pixel_count=count,
        rmse=math.sqrt(mse),
        mse=mse,
        absrel=absrel,
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
    )


def align_depth(pred: DepthMap, gt: DepthMap) -> DepthMap:
    """Nearest-neighbor resize of pred onto gt dimensions (gt is never touched)."""
    if (pred.width, pred.height) == (gt.width, gt.height):
        return pred
    return DepthMap(resize_nearest(pred.values, (gt.width, gt.height)))


def warp_loss(d_n: DepthMap, d_prev: DepthMap, flow: FlowField) -> float:
    """Masked mean |d_n(p) - d_prev(p + flow(p))| in meters.

    A pixel contributes when its flow is valid, the warped target lands in
    bounds after nearest-pixel rounding, and both depths are valid there.
    """
    if (d_n.width, d_n.height) != (d_prev.width, d_prev.height):
        raise DimensionMismatch("depth pair dimensions differ")
    if (flow.width, flow.height) != (d_n.width, d_n.height):
        raise DimensionMismatch("flow dimensions differ from depth")
    h, w = d_n.values.shape
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    tu = np.rint(uu + flow.du).astype(np.int64)
    tv = np.rint(vv + flow.dv).astype(np.int64)
    in_bounds = (tu >= 0) & (tu < w) & (tv >= 0) & (tv < h)
    tu_c = np.clip(tu, 0, w - 1)
    tv_c = np.clip(tv, 0, h - 1)
    target_depth = d_prev.to_meters()[tv_c, tu_c]
    target_valid = d_prev.valid_mask()[tv_c, tu_c]
    mask = flow.valid & in_bounds & d_n.valid_mask() & target_valid
    if not mask.any():
        raise NoValidPixels("no warpable pixels")
    return float(np.mean(np.abs(d_n.to_meters()[mask] - target_depth[mask])))


def opw(depth_sequence, flows) -> TemporalReport:
    """Average the per-pair warping losses over a depth sequence."""
    n = len(depth_sequence)
    if n < 2:
        raise TooFewFrames(f"need at least 2 frames, got {n}")
    if len(flows) != n - 1:
        raise TooFewFrames(f"need {n - 1} flow fields, got {len(flows)}")
    losses = tuple(
        warp_loss(depth_sequence[i], depth_sequence[i - 1], flows[i - 1]) for i in range(1, n)
    )
    return TemporalReport(frame_count=n, pair_losses=losses, opw=float(np.mean(losses)))


def _as_rgb_array(m):
    if isinstance(m, EnvironmentMap):
        return m.values.astype(np.float64), None
    if isinstance(m, ProbeRender):
        return m.image.astype(np.float64), m.mask
    return np.asarray(m, dtype=np.float64), None


def _paired(pred, gt, mask):
    p, pm = _as_rgb_array(pred)
    g, gm = _as_rgb_array(gt)
    if p.shape != g.shape:
        raise DimensionMismatch(f"{p.shape} vs {g.shape}")
    if mask is None:
        mask = pm if pm is not None else gm
    if mask is not None:
        p = p[mask]
        g = g[mask]
    else:
        p = p.reshape(-1, p.shape[-1])
        g = g.reshape(-1, g.shape[-1])
    return p, g


def env_rmse(pred, gt, mask=None) -> float:
    """Root mean square error over all channels of the compared region."""
    p, g = _paired(pred, gt, mask)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def env_si_rmse(pred, gt, mask=None) -> float:
    """RMSE after the single scalar rescaling of pred that minimizes it.

    The optimal scale is s* = sum(pred*gt)/sum(pred^2) (0 for an all-zero
    prediction), so si_rmse <= rmse always and k*gt scores exactly 0.
    """
    p, g = _paired(pred, gt, mask)
    denom = float(np.sum(p * p))
    scale = float(np.sum(p * g)) / denom if denom > 0 else 0.0
    return float(np.sqrt(np.mean((scale * p - g) ** 2)))


def env_angular(pred, gt, mask=None) -> float:
    """Mean per-pixel angle in degrees between RGB vectors, where both are nonzero.

    Computed as atan2(|cross|, dot) rather than acos of the normalized dot:
    the two are the same angle, but atan2 stays exact for colinear vectors
    instead of collapsing to acos(1 - epsilon).
    """
    p, g = _paired(pred, gt, mask)
    pn = np.linalg.norm(p, axis=-1)
    gn = np.linalg.norm(g, axis=-1)
    both = (pn > 0) & (gn > 0)
    if not both.any():
        raise DegenerateInput("no pixel has nonzero color in both inputs")
    pb, gb = p[both], g[both]
    cross = np.linalg.norm(np.cross(pb, gb), axis=-1)
    dot = np.sum(pb * gb, axis=-1)
    angles = np.degrees(np.arctan2(cross, dot))
    return float(np.mean(angles))


def lighting_report(target, pred, gt, mask=None) -> LightingMetricReport:
    return LightingMetricReport(
        target=target,
        angular_error_deg=env_angular(pred, gt, mask),
        si_rmse=env_si_rmse(pred, gt, mask),
        rmse=env_rmse(pred, gt, mask),
    )


def three_sphere_eval(pred_map: EnvironmentMap, gt_map: EnvironmentMap, resolution=64):
    """Compare two environment maps directly and through the three probes.

    Returns four LightingMetricReports in the order env_map, diffuse,
    matte, mirror; probe metrics are restricted to the sphere mask.
    """
    reports = [lighting_report("env_map", pred_map, gt_map)]
    for kind in ("diffuse", "matte", "mirror"):
        material = ProbeMaterial(kind=kind)
        pred_probe = render_probe(pred_map, material, resolution)
        gt_probe = render_probe(gt_map, material, resolution)
        reports.append(lighting_report(kind, pred_probe, gt_probe, mask=gt_probe.mask))
    return reports


# -- flow file container --------------------------------------------------
# Header {width, height: u32 LE} then row-major float32 (du, dv, valid)
# triples; valid is 0.0 / 1.0.


def encode_flow(flow: FlowField) -> bytes:
    triples = np.stack(
        [
            flow.du.astype("<f4"),
            flow.dv.astype("<f4"),
            flow.valid.astype("<f4"),
        ],
        axis=-1,
    )
    return struct.pack("<II", flow.width, flow.height) + triples.tobytes()


def decode_flow(buf: bytes) -> FlowField:
    if len(buf) < 8:
        raise MetricError("flow buffer shorter than its header")
    w, h = struct.unpack("<II", buf[:8])
    expected = 8 + w * h * 3 * 4
    if len(buf) != expected:
        raise MetricError(f"flow buffer is {len(buf)} bytes, expected {expected}")
    triples = np.frombuffer(buf[8:], dtype="<f4").reshape(h, w, 3)
    return FlowField(
        du=triples[..., 0].astype(np.float32),
        dv=triples[..., 1].astype(np.float32),
        valid=triples[..., 2] != 0.0,
    )
