"""File formats: prediction/truth dumps (JSON Lines), class catalogs,
experiment configs and CSV outputs.

Floats go to JSON with Python's shortest round-trip repr and to CSV with 17
significant digits; both read back to the same double. Every writer replaces
its target atomically.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from .core import ClassCatalog, FrameRecord, GroundTruthBox, PredictedBox
from .crb import CrbConfig
from .policies import POLICIES
from .simulation import ClassSpec, DetectorSurrogate, Protocol, WorldConfig, default_classes

__all__ = [
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "atomic_write",
    "format_float",
    "parse_frame_line",
    "read_dump",
    "read_truth_dump",
    "write_dump",
    "read_catalog",
    "catalog_to_dict",
    "read_ids",
    "load_config",
    "parse_config",
    "default_config_dict",
    "csv_text",
]


class ConfigError(ValueError):
    """Invalid experiment configuration or command-line input."""


class DataError(ValueError):
    """Malformed dump, catalog or id file."""


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it over."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """CSV with ``\\n`` line endings; floats at 17 significant digits."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- dumps


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _loads(text: str):
    return json.loads(text, parse_constant=_reject_constant)


def _int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{what} must be an integer, got {value!r}")
    return value


def _real(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{what} must be finite")
    return value


def _vector(value, n: int | None, what: str) -> tuple[float, ...]:
    if not isinstance(value, list) or (n is not None and len(value) != n):
        size = f"{n} numbers" if n is not None else "a list of numbers"
        raise ValueError(f"{what} must be {size}")
    return tuple(_real(v, what) for v in value)


def _check_keys(obj: Mapping, allowed: Iterable[str], required: Iterable[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{where} must be a JSON object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ValueError(f"{where}: unknown key {extra[0]!r}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValueError(f"{where}: missing key {missing[0]!r}")


_PRED_KEYS = ("label", "confidence", "center", "size", "heading", "scores")
_TRUTH_KEYS = ("label", "confidence", "center", "size", "heading", "scores")


def _predicted_box(obj, where: str) -> PredictedBox:
    _check_keys(obj, _PRED_KEYS, ("label", "confidence", "center", "size"), where)
    scores = obj.get("scores")
    return PredictedBox(
        _int(obj["label"], "label"),
        _real(obj["confidence"], "confidence"),
        _vector(obj["center"], 3, "center"),
        _vector(obj["size"], 3, "size"),
        _real(obj.get("heading", 0.0), "heading"),
        None if scores is None else _vector(scores, None, "scores"),
    )


def _truth_box(obj, where: str) -> GroundTruthBox:
    # truth lines share the prediction layout; confidence and scores are ignored
    _check_keys(obj, _TRUTH_KEYS, ("label", "center", "size"), where)
    return GroundTruthBox(
        _int(obj["label"], "label"),
        _vector(obj["center"], 3, "center"),
        _vector(obj["size"], 3, "size"),
        _real(obj.get("heading", 0.0), "heading"),
    )


def parse_frame_line(text: str, truth: bool = False):
    """One dump line to ``FrameRecord`` (or ``(frame_id, boxes)`` if ``truth``).

    Raises:
        ValueError: on malformed JSON, unknown keys, non-finite numbers,
            out-of-range confidences or headings.
    """
    obj = _loads(text)
    _check_keys(obj, ("frame_id", "boxes", "embedding"), ("frame_id",), "frame")
    fid = obj["frame_id"]
    if not isinstance(fid, str) or not fid:
        raise ValueError("frame_id must be a non-empty string")
    raw = obj.get("boxes", [])
    if not isinstance(raw, list):
        raise ValueError("boxes must be a list")
    make = _truth_box if truth else _predicted_box
    boxes = tuple(make(b, f"box {i}") for i, b in enumerate(raw))
    if truth:
        return fid, boxes
    emb = obj.get("embedding")
    return FrameRecord(fid, boxes, None if emb is None else _vector(emb, None, "embedding"))


def _read_lines(path: str, truth: bool):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read dump ({exc.strerror})") from None
    out, seen = [], set()
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = parse_frame_line(line, truth)
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            fid = rec[0] if truth else rec.frame_id
            if fid in seen:
                raise DataError(f"{path}:{lineno}: duplicate frame_id {fid!r}")
            seen.add(fid)
            out.append(rec)
    return out


def read_dump(path: str) -> list[FrameRecord]:
    """Prediction dump, one frame per line, in file order.

    Raises:
        DataError: with ``path:line`` for the first bad line.
    """
    return _read_lines(path, False)


def read_truth_dump(path: str) -> dict[str, tuple[GroundTruthBox, ...]]:
    return dict(_read_lines(path, True))


def _box_dict(box) -> dict:
    d = {
        "label": box.label,
        "center": list(box.center),
        "size": list(box.size),
        "heading": box.heading,
    }
    if isinstance(box, PredictedBox):
        d["confidence"] = box.confidence
        if box.scores is not None:
            d["scores"] = list(box.scores)
    return d


def frame_to_json(frame_id: str, boxes: Sequence, embedding=None) -> str:
    obj: dict = {"frame_id": frame_id, "boxes": [_box_dict(b) for b in boxes]}
    if embedding is not None:
        obj["embedding"] = list(embedding)
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_dump(path: str, frames: Sequence[FrameRecord] | Mapping[str, Sequence[GroundTruthBox]]) -> None:
    """Write frame records (or a truth mapping) as JSON Lines."""
    if isinstance(frames, Mapping):
        lines = [frame_to_json(fid, boxes) for fid, boxes in frames.items()]
    else:
        lines = [frame_to_json(f.frame_id, f.boxes, f.embedding) for f in frames]
    atomic_write(path, "".join(line + "\n" for line in lines))


# -------------------------------------------------------------- catalogs


def read_catalog(path: str) -> ClassCatalog:
    """``{"known": [...], "unknown": [...], "discovered": [...]}``; the last
    two are optional."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = _loads(fh.read())
        _check_keys(obj, ("known", "unknown", "discovered"), ("known",), "catalog")
        ids = {k: [_int(c, f"catalog.{k} entry") for c in obj.get(k, [])] for k in ("known", "unknown", "discovered")}
        return ClassCatalog(tuple(ids["known"]), tuple(ids["unknown"]), frozenset(ids["discovered"]))
    except OSError as exc:
        raise DataError(f"{path}: cannot read catalog ({exc.strerror})") from None
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def catalog_to_dict(catalog: ClassCatalog) -> dict:
    return {
        "known": list(catalog.known_ids),
        "unknown": list(catalog.unknown_ids),
        "discovered": sorted(catalog.discovered),
    }


def read_ids(path: str) -> list[str]:
    """Frame ids, one per line; blank lines and ``#`` comments skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise DataError(f"{path}: cannot read id list ({exc.strerror})") from None
    return [ln for ln in lines if ln and not ln.startswith("#")]


# --------------------------------------------------------------- configs


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything :func:`owal3d.simulation.run_experiment` needs."""

    world: WorldConfig = field(default_factory=WorldConfig)
    protocol: Protocol = field(default_factory=Protocol)
    policy: str = "open-crb"
    olc_first_round: bool = False
    detector: DetectorSurrogate = field(default_factory=DetectorSurrogate)
    crb: CrbConfig = field(default_factory=CrbConfig)
    default_iou: float = 0.5
    iou_thresholds: Mapping[int, float] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.protocol.seed

    def to_dict(self) -> dict:
        world = {f.name: getattr(self.world, f.name) for f in fields(self.world) if f.name not in ("seed", "classes")}
        world["classes"] = [
            {
                "class_id": c.class_id,
                "name": c.name,
                "known": c.known,
                "frequency": c.frequency,
                "size_mean": list(c.size_mean),
                "size_std": list(c.size_std),
                "position_range": c.position_range,
            }
            for c in self.world.classes
        ]
        detector = {f.name: getattr(self.detector, f.name) for f in fields(self.detector) if f.name != "counts"}
        crb = {f.name: getattr(self.crb, f.name) for f in fields(self.crb) if f.name != "n_r"}
        crb["geometry_bins"] = list(self.crb.geometry_bins)
        return {
            "seed": self.seed,
            "world": world,
            "protocol": {"m": self.protocol.m, "n_r": self.protocol.n_r, "rounds": self.protocol.rounds},
            "policy": {"name": self.policy, "olc_first_round": self.olc_first_round},
            "detector": detector,
            "crb": crb,
            "metrics": {
                "default_iou": self.default_iou,
                "iou_thresholds": {str(c): t for c, t in sorted(self.iou_thresholds.items())},
            },
        }


_SECTIONS = ("seed", "world", "protocol", "policy", "detector", "crb", "metrics")
_CLASS_KEYS = ("class_id", "name", "known", "frequency", "size_mean", "size_std", "position_range")


def _section(obj: Mapping, name: str, allowed: Iterable[str]) -> dict:
    sec = obj.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config key {name!r} must be an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{name}.{key}'")
    return sec


def _typed(value, kind, key: str):
    """Check a JSON scalar against ``kind`` (int, float, bool, str, or None-able)."""
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
        value = float(value) if ok else value
    elif kind == "float?":
        ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
        value = None if value is None else float(value)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"config key {key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _class_spec(obj, i: int) -> ClassSpec:
    where = f"world.classes[{i}]"
    if not isinstance(obj, dict):
        raise ConfigError(f"config key {where} must be an object")
    for key in obj:
        if key not in _CLASS_KEYS:
            raise ConfigError(f"unknown config key '{where}.{key}'")
    for key in ("class_id", "name", "known", "frequency", "size_mean"):
        if key not in obj:
            raise ConfigError(f"config key {where} is missing {key!r}")

    def triple(key):
        v = obj[key]
        if not isinstance(v, list) or len(v) != 3:
            raise ConfigError(f"config key {where}.{key}: expected 3 numbers")
        return tuple(_typed(x, float, f"{where}.{key}") for x in v)

    kwargs = {
        "class_id": _typed(obj["class_id"], int, f"{where}.class_id"),
        "name": _typed(obj["name"], str, f"{where}.name"),
        "known": _typed(obj["known"], bool, f"{where}.known"),
        "frequency": _typed(obj["frequency"], float, f"{where}.frequency"),
        "size_mean": triple("size_mean"),
    }
    if "size_std" in obj:
        kwargs["size_std"] = triple("size_std")
    if "position_range" in obj:
        kwargs["position_range"] = _typed(obj["position_range"], float, f"{where}.position_range")
    try:
        return ClassSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config key {where}: {exc}") from None


def parse_config(obj: Mapping, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from parsed JSON.

    Missing keys take the library defaults. ``OWAL_SEED`` in ``env``
    (``os.environ`` by default) overrides ``seed``.

    Raises:
        ConfigError: naming the first unknown or ill-typed key.
    """
    env = os.environ if env is None else env
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    for key in obj:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")

    seed = _typed(obj.get("seed", 0), int, "seed")
    if env.get("OWAL_SEED") not in (None, ""):
        try:
            seed = int(env["OWAL_SEED"])
        except ValueError:
            raise ConfigError(f"OWAL_SEED must be an integer, got {env['OWAL_SEED']!r}") from None

    world_types = {
        "n_frames": int,
        "n_test": int,
        "objects_per_frame": float,
        "scene_concentration": "float?",
        "embedding_dim": int,
        "embedding_noise": float,
        "unknown_feature_scale": float,
        "classes": list,
    }
    sec = _section(obj, "world", world_types)
    world_kw = {k: _typed(v, world_types[k], f"world.{k}") for k, v in sec.items() if k != "classes"}
    if "classes" in sec:
        classes = _typed(sec["classes"], list, "world.classes")
        world_kw["classes"] = tuple(_class_spec(c, i) for i, c in enumerate(classes))

    proto_types = {"m": int, "n_r": int, "rounds": int}
    sec = _section(obj, "protocol", proto_types)
    proto_kw = {k: _typed(v, proto_types[k], f"protocol.{k}") for k, v in sec.items()}

    sec = _section(obj, "policy", ("name", "olc_first_round"))
    policy = _typed(sec.get("name", "open-crb"), str, "policy.name")
    if policy not in POLICIES:
        raise ConfigError(f"config key policy.name: unknown policy {policy!r}")
    olc_first = _typed(sec.get("olc_first_round", False), bool, "policy.olc_first_round")

    det_types = {
        "half_saturation": float,
        "conf_noise": float,
        "loc_noise": float,
        "size_noise": float,
        "spurious_rate": float,
        "fp_rate": float,
    }
    sec = _section(obj, "detector", det_types)
    det_kw = {k: _typed(v, det_types[k], f"detector.{k}") for k, v in sec.items()}

    crb_types = {
        "k1": int,
        "k2": int,
        "geometry_bins": list,
        "prior_source": str,
        "olc_every_round": bool,
        "smoothing": float,
        "kmeans_max_iter": int,
        "kmeans_tol": float,
    }
    sec = _section(obj, "crb", crb_types)
    crb_kw = {k: _typed(v, crb_types[k], f"crb.{k}") for k, v in sec.items()}
    if "geometry_bins" in crb_kw:
        crb_kw["geometry_bins"] = tuple(_typed(b, int, "crb.geometry_bins") for b in crb_kw["geometry_bins"])

    sec = _section(obj, "metrics", ("default_iou", "iou_thresholds"))
    default_iou = _typed(sec.get("default_iou", 0.5), float, "metrics.default_iou")
    raw_thr = _typed(sec.get("iou_thresholds", {}), dict, "metrics.iou_thresholds")
    thresholds = {}
    for k, v in raw_thr.items():
        try:
            cid = int(k)
        except ValueError:
            raise ConfigError(f"config key metrics.iou_thresholds: class id {k!r} is not an integer") from None
        thresholds[cid] = _typed(v, float, f"metrics.iou_thresholds.{k}")
    for name, tau in (("metrics.default_iou", default_iou), *((f"metrics.iou_thresholds.{c}", t) for c, t in thresholds.items())):
        if not 0 < tau < 1:
            raise ConfigError(f"config key {name}: IoU threshold must be in (0, 1)")

    try:
        protocol = Protocol(seed=seed, **proto_kw)
        world = WorldConfig(seed=seed, **world_kw)
        detector = DetectorSurrogate(**det_kw)
        # k1/k2 must fit n_r at construction; select_frames adjusts per round
        crb = CrbConfig(n_r=min(protocol.n_r, crb_kw.get("k2", CrbConfig.k2)), **crb_kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    budget = protocol.m + protocol.rounds * protocol.n_r
    if budget > world.n_frames:
        raise ConfigError(f"config budget m + rounds * n_r = {budget} exceeds world.n_frames = {world.n_frames}")
    return ExperimentConfig(world, protocol, policy, olc_first, detector, crb, default_iou, thresholds)


def load_config(path: str | None, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Parse a config file; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("owal3d").joinpath("default_config.json").read_text(encoding="utf-8")
        where = "bundled default config"
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        where = path
    try:
        obj = _loads(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid JSON ({exc})") from None
    return parse_config(obj, env)


def default_config_dict() -> dict:
    """The library defaults in config-file form."""
    return ExperimentConfig(
        WorldConfig(classes=default_classes()),
    ).to_dict()
