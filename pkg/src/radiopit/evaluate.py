"""Evaluation protocol: per-scene 2:1 splits, RMSE at query points, method comparison."""
from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kriging
from .errors import ComparabilityError, InvalidValueError
from .ingest import Scene
from .pit.masking import SampleSet, mask_generate
from .pit.model import forward, rmse_loss
from .pit.train import TtaConfig, adapt_stream

log = logging.getLogger(__name__)

METHODS = ("pit", "pit+tta", "kriging")
MIN_POINTS = 3


def split_seed(seed: int, scene_id: str) -> int:
    """Per-scene split seed; stable across runs and independent of stream position."""
    return (int(seed) * 1_000_003 + zlib.crc32(scene_id.encode("utf-8"))) % (2 ** 63)


def scene_sample(scene: Scene, scene_id: str, seed: int) -> SampleSet:
    """2:1 known/query split of a scene's points."""
    pts = scene.points
    coords = np.array([(r, c) for r, c, _ in pts], dtype=np.int64).reshape(-1, 2)
    values = np.array([v for _, _, v in pts], dtype=np.float64)
    return mask_generate(coords, values, scene.shape, seed=split_seed(seed, scene_id))


@dataclass
class EvalReport:
    method: str
    seed: int
    tta_enabled: bool
    eta: float
    scenes: list[dict]
    skipped: list[str] = field(default_factory=list)

    @property
    def rmses(self) -> list[float]:
        return [s["rmse"] for s in self.scenes]

    @property
    def aggregate(self) -> dict:
        r = np.array(self.rmses, dtype=np.float64)
        if r.size == 0:
            return {"mean": None, "std": None}
        return {"mean": float(r.mean()), "std": float(r.std())}

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "tta": {"enabled": self.tta_enabled, "eta": self.eta},
            "scenes": self.scenes,
            "skipped": self.skipped,
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["method"], d["seed"], d["tta"]["enabled"], d["tta"]["eta"],
                   list(d["scenes"]), list(d.get("skipped", [])))


def evaluate_method(method: str, scenes, seed: int = 0, params=None, cfg=None,
                    tta: TtaConfig | None = None, kind: str = "exponential") -> EvalReport:
    """Score one method over ``scenes``, a list of ``(scene_id, Scene)`` in stream order.

    ``pit+tta`` with a zero rate is exactly frozen evaluation and is
    reported as ``pit``.
    """
    if method not in METHODS:
        raise InvalidValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method != "kriging" and (params is None or cfg is None):
        raise InvalidValueError(f"{method} needs model parameters and config")
    tta = tta or TtaConfig()
    if method == "pit+tta" and tta.lr == 0:
        method = "pit"
    use_tta = method == "pit+tta"

    ids, samples, skipped = [], [], []
    for sid, scene in scenes:
        if len(scene.points) < MIN_POINTS:
            log.warning("skipping scene %s: %d points", sid, len(scene.points))
            skipped.append(sid)
            continue
        ids.append(sid)
        samples.append(scene_sample(scene, sid, seed))

    rows = []
    if method == "kriging":
        for sid, s in zip(ids, samples):
            pts = np.column_stack([s.known_rc, s.known_values])
            model = kriging.fit_points(pts, kind)
            pred, _ = kriging.krige_many(pts, model, s.query_rc)
            rows.append(_row(sid, s, rmse_loss(pred, s.query_truth), variogram=model.to_dict()))
    elif use_tta:
        result = adapt_stream(params, cfg, tta, samples)
        for t, (sid, s) in enumerate(zip(ids, samples)):
            rows.append(_row(sid, s, result.rmses[t], flagged=t in result.flagged))
    else:
        for sid, s in zip(ids, samples):
            rows.append(_row(sid, s, rmse_loss(forward(params, cfg, s), s.query_truth)))
    return EvalReport(method, seed, use_tta, tta.lr if use_tta else 0.0, rows, skipped)


def _row(sid, sample, rmse, variogram=None, flagged=False):
    row = {"id": sid, "n_known": len(sample.known_rc), "n_query": len(sample.query_rc), "rmse": rmse}
    if variogram is not None:
        row["variogram"] = variogram
    if flagged:
        row["flagged"] = True
    return row


def relative_delta(rmse_a: float, rmse_b: float) -> float:
    """Percent RMSE reduction going from method A (the base) to method B."""
    if rmse_a == 0:
        return 0.0 if rmse_b == 0 else -math.inf
    return 100.0 * (rmse_a - rmse_b) / rmse_a


def _split_key(report: EvalReport):
    return report.seed, sorted((s["id"], s["n_known"], s["n_query"]) for s in report.scenes)


def compare(reports: list[EvalReport]) -> dict:
    """Aggregate table plus pairwise relative deltas, using each row's method as base."""
    if not reports:
        raise InvalidValueError("nothing to compare")
    key = _split_key(reports[0])
    for r in reports[1:]:
        if _split_key(r) != key:
            raise ComparabilityError(f"{r.method} was scored on different scenes or splits "
                                     f"than {reports[0].method}")
    table = [{"method": r.method, "tta": r.tta_enabled, "eta": r.eta, **r.aggregate} for r in reports]
    deltas = []
    for a in reports:
        for b in reports:
            if a is not b:
                deltas.append({"base": a.method, "other": b.method,
                               "delta_pct": relative_delta(a.aggregate["mean"], b.aggregate["mean"])})
    return {"table": table, "deltas": deltas}


def format_comparison(result: dict) -> str:
    lines = [f"{'method':<10} {'mean RMSE':>10} {'std':>10}"]
    for row in result["table"]:
        lines.append(f"{row['method']:<10} {row['mean']:>10.6f} {row['std']:>10.6f}")
    for d in result["deltas"]:
        lines.append(f"{d['base']} -> {d['other']}: {d['delta_pct']:+.1f}%")
    return "\n".join(lines)
