"""File formats for the annotation/training/retrieval pipeline.

Text formats are strict: exact headers, '.' decimal separator, UTF-8. Binary
containers are little-endian with four-byte magics:

    GDSC  descriptor store: magic, dim u32, count u64, count*dim f32,
          plus an `<path>.ids` sidecar with one id per line (row order)
    GSIM  model checkpoint: magic, version u16, layer count u16,
          layer_count+1 dims u32, then per layer the weight matrix (row-major)
          and bias vector as f32; `<path>.json` sidecar holds seed/config
    GPCA  whitening transform: magic, version u16, output dims u32,
          input dims u32, renormalize u8, mean f32, projection f32 row-major

All writers are atomic (temp file + rename) and byte-deterministic.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .embedding import EmbeddingModel
from .errors import FormatError, InvalidInputError
from .fov2d import CameraPose2D
from .fov3d import CameraIntrinsics, PointCloud, Pose6DOF
from .pairs import GradedPair, GradedPairSet
from .retrieval import WhitenTransform

POSE2D_HEADER = "id,t0,t1,heading_deg"
POSE6_HEADER = "id,x,y,z,qw,qx,qy,qz"
PAIR_HEADER = "query_id,map_id,psi"
RESULTS_HEADER = "query_id,rank,map_id,distance"
TRACE_HEADER = "batch,pairs_seen,lr,loss"
CURVE_HEADER = "threshold,recall"

GDSC_MAGIC = b"GDSC"
GSIM_MAGIC = b"GSIM"
GPCA_MAGIC = b"GPCA"
CHECKPOINT_VERSION = 1
WHITENING_VERSION = 1


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a same-directory temp file and rename, so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _parse_float(token: str, path: str, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"bad {what} {token!r}", path, line) from None


def _read_strict_csv(path: str, header: str, n_fields: int):
    """Yield (line_number, fields) for each data row of a strict CSV."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    if not lines:
        raise FormatError("empty file", path, 1)
    if lines[0] != header:
        raise FormatError(f"expected header {header!r}, got {lines[0]!r}", path, 1)
    for i, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split(",")
        if len(fields) != n_fields:
            raise FormatError(f"expected {n_fields} fields, got {len(fields)}", path, i)
        yield i, fields


def read_pose2d_csv(path: str) -> list[CameraPose2D]:
    poses = []
    for i, (pid, t0, t1, h) in _read_strict_csv(path, POSE2D_HEADER, 4):
        try:
            poses.append(
                CameraPose2D(
                    id=pid,
                    t0=_parse_float(t0, path, i, "t0"),
                    t1=_parse_float(t1, path, i, "t1"),
                    heading_deg=_parse_float(h, path, i, "heading"),
                )
            )
        except InvalidInputError as exc:
            raise FormatError(str(exc), path, i) from None
    if not poses:
        raise FormatError("no pose rows", path)
    return poses


def write_pose2d_csv(path: str, poses) -> None:
    rows = [POSE2D_HEADER]
    rows += [f"{p.id},{p.t0:.9g},{p.t1:.9g},{p.heading_deg:.9g}" for p in poses]
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_pose6_csv(path: str) -> list[Pose6DOF]:
    poses = []
    for i, fields in _read_strict_csv(path, POSE6_HEADER, 8):
        pid = fields[0]
        vals = [_parse_float(v, path, i, "pose value") for v in fields[1:]]
        try:
            poses.append(Pose6DOF(id=pid, translation=tuple(vals[:3]), rotation=tuple(vals[3:])))
        except InvalidInputError as exc:
            raise FormatError(str(exc), path, i) from None
    if not poses:
        raise FormatError("no pose rows", path)
    return poses


def write_pose6_csv(path: str, poses) -> None:
    rows = [POSE6_HEADER]
    for p in poses:
        t, q = p.translation, p.rotation
        rows.append(
            f"{p.id},{t[0]:.9g},{t[1]:.9g},{t[2]:.9g},"
            f"{q[0]:.17g},{q[1]:.17g},{q[2]:.17g},{q[3]:.17g}"
        )
    atomic_write_text(path, "\n".join(rows) + "\n")


def write_pair_csv(path: str, pairs: GradedPairSet) -> None:
    """Explicit pairs sorted query-major then map id, psi with 6 decimals."""
    rows = [PAIR_HEADER]
    rows += [f"{p.query_id},{p.map_id},{p.psi:.6f}" for p in pairs.sorted_pairs()]
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_pair_csv(path: str, query_ids=None, map_ids=None) -> GradedPairSet:
    """Read explicit pairs; id universes default to the ids observed in the file.

    Ids that never take part in a positive-similarity pair are invisible to
    the observed universe; pass explicit universes to keep them.
    """
    records = []
    for i, (qid, mid, psi) in _read_strict_csv(path, PAIR_HEADER, 3):
        records.append((qid, mid, _parse_float(psi, path, i, "psi"), i))
    if query_ids is None:
        query_ids = sorted({r[0] for r in records})
    if map_ids is None:
        map_ids = sorted({r[1] for r in records})
    out = GradedPairSet(query_ids, map_ids)
    for qid, mid, psi, i in records:
        try:
            out.add(GradedPair(qid, mid, psi))
        except InvalidInputError as exc:
            raise FormatError(str(exc), path, i) from None
    return out


def read_xyz(path: str) -> PointCloud:
    points = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for i, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                parts = raw.split()
                if len(parts) != 3:
                    raise FormatError(f"expected 3 coordinates, got {len(parts)}", path, i)
                points.append([_parse_float(v, path, i, "coordinate") for v in parts])
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    if not points:
        raise FormatError("no points", path)
    return PointCloud(np.array(points))


def write_xyz(path: str, cloud: PointCloud) -> None:
    rows = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in cloud.points]
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_ply(path: str) -> PointCloud:
    """ASCII PLY restricted to float x/y/z vertex properties."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    if not lines or lines[0].strip() != "ply":
        raise FormatError("not a PLY file", path, 1)
    n_vertices = None
    properties: list[str] = []
    body_start = None
    in_vertex_element = False
    for i, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise FormatError("only ascii PLY is supported", path, i)
        elif tokens[0] == "element":
            in_vertex_element = tokens[1] == "vertex"
            if in_vertex_element:
                n_vertices = int(tokens[2])
        elif tokens[0] == "property" and in_vertex_element:
            properties.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = i
            break
    if body_start is None or n_vertices is None:
        raise FormatError("truncated PLY header", path)
    try:
        ix, iy, iz = properties.index("x"), properties.index("y"), properties.index("z")
    except ValueError:
        raise FormatError("vertex element lacks x/y/z properties", path) from None
    body = [l for l in lines[body_start:] if l.strip()]
    if len(body) < n_vertices:
        raise FormatError(f"expected {n_vertices} vertices, found {len(body)}", path)
    points = []
    for i, raw in enumerate(body[:n_vertices], start=body_start + 1):
        parts = raw.split()
        if len(parts) < len(properties):
            raise FormatError("short vertex row", path, i)
        points.append(
            [
                _parse_float(parts[ix], path, i, "x"),
                _parse_float(parts[iy], path, i, "y"),
                _parse_float(parts[iz], path, i, "z"),
            ]
        )
    return PointCloud(np.array(points))


def load_point_cloud(path: str) -> PointCloud:
    """Dispatch on extension: .xyz or .ply."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".xyz":
        return read_xyz(path)
    if ext == ".ply":
        return read_ply(path)
    raise FormatError(f"unknown point cloud extension {ext!r} (expected .xyz or .ply)", path)


_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def read_intrinsics(path: str) -> CameraIntrinsics:
    values: dict[str, float] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for i, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise FormatError("expected key=value", path, i)
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in _INTRINSIC_KEYS:
                    raise FormatError(f"unknown intrinsics key {key!r}", path, i)
                if key in values:
                    raise FormatError(f"duplicate intrinsics key {key!r}", path, i)
                values[key] = _parse_float(value.strip(), path, i, key)
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    missing = [k for k in _INTRINSIC_KEYS if k not in values]
    if missing:
        raise FormatError(f"missing intrinsics keys: {', '.join(missing)}", path)
    return CameraIntrinsics(
        fx=values["fx"],
        fy=values["fy"],
        cx=values["cx"],
        cy=values["cy"],
        width=int(values["width"]),
        height=int(values["height"]),
    )


def write_intrinsics(path: str, intr: CameraIntrinsics) -> None:
    text = "".join(
        f"{key}={getattr(intr, key):.9g}\n" if key not in ("width", "height")
        else f"{key}={getattr(intr, key)}\n"
        for key in _INTRINSIC_KEYS
    )
    atomic_write_text(path, text)


class DescriptorStore:
    """Named descriptor rows: the on-disk unit for features and embeddings."""

    def __init__(self, ids, matrix):
        self.ids = [str(i) for i in ids]
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise InvalidInputError("descriptor matrix must have one row per id")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInputError("descriptor ids must be unique")
        self._index = {pid: i for i, pid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, pid: str) -> bool:
        return pid in self._index

    def __getitem__(self, pid: str) -> np.ndarray:
        try:
            return self.matrix[self._index[pid]]
        except KeyError:
            raise KeyError(pid) from None

    def subset(self, ids) -> "DescriptorStore":
        return DescriptorStore(list(ids), np.stack([self[i] for i in ids]))


def _ids_sidecar(path: str) -> str:
    return path + ".ids"


def save_descriptor_store(path: str, store: DescriptorStore) -> None:
    n, d = store.matrix.shape
    payload = GDSC_MAGIC + struct.pack("<IQ", d, n)
    payload += store.matrix.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)
    atomic_write_text(_ids_sidecar(path), "\n".join(store.ids) + "\n")


def load_descriptor_store(path: str) -> DescriptorStore:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    if blob[:4] != GDSC_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {GDSC_MAGIC!r}", path)
    if len(blob) < 16:
        raise FormatError("truncated descriptor store header", path)
    d, n = struct.unpack("<IQ", blob[4:16])
    expected = 16 + 4 * d * n
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes, found {len(blob)}", path)
    matrix = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, d).astype(float)
    ids_path = _ids_sidecar(path)
    try:
        with open(ids_path, "r", encoding="utf-8") as fh:
            ids = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(str(exc), ids_path) from None
    ids = [i for i in ids if i]
    if len(ids) != n:
        raise FormatError(f"id sidecar has {len(ids)} ids for {n} rows", ids_path)
    return DescriptorStore(ids, matrix)


def _meta_sidecar(path: str) -> str:
    return path + ".json"


def save_checkpoint(path: str, model: EmbeddingModel, seed=None, config=None) -> None:
    dims = model.dims
    payload = GSIM_MAGIC + struct.pack("<HH", CHECKPOINT_VERSION, len(model.weights))
    payload += struct.pack(f"<{len(dims)}I", *dims)
    for w, b in zip(model.weights, model.biases):
        payload += w.astype("<f4").tobytes()
        payload += b.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)
    meta = {
        "format": "gsim-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dims": dims,
        "output_normalize": model.output_normalize,
        "seed": seed,
        "config": config,
    }
    atomic_write_text(_meta_sidecar(path), json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path: str) -> tuple[EmbeddingModel, dict]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    if blob[:4] != GSIM_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {GSIM_MAGIC!r}", path)
    version, n_layers = struct.unpack("<HH", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path)
    off = 8
    dims = struct.unpack(f"<{n_layers + 1}I", blob[off : off + 4 * (n_layers + 1)])
    off += 4 * (n_layers + 1)
    weights, biases = [], []
    for i in range(n_layers):
        n_in, n_out = dims[i], dims[i + 1]
        w = np.frombuffer(blob, dtype="<f4", count=n_out * n_in, offset=off)
        off += 4 * n_out * n_in
        b = np.frombuffer(blob, dtype="<f4", count=n_out, offset=off)
        off += 4 * n_out
        weights.append(w.reshape(n_out, n_in).astype(float))
        biases.append(b.astype(float))
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", path)
    meta_path = _meta_sidecar(path)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise FormatError(str(exc), meta_path) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad metadata JSON: {exc}", meta_path) from None
    model = EmbeddingModel(weights, biases, bool(meta.get("output_normalize", True)))
    return model, meta


def save_whitening(path: str, transform: WhitenTransform) -> None:
    payload = GPCA_MAGIC + struct.pack(
        "<HIIB",
        WHITENING_VERSION,
        transform.output_dim,
        transform.input_dim,
        1 if transform.renormalize else 0,
    )
    payload += transform.mean.astype("<f4").tobytes()
    payload += transform.projection.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def load_whitening(path: str) -> WhitenTransform:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(str(exc), path) from None
    if blob[:4] != GPCA_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {GPCA_MAGIC!r}", path)
    version, out_d, in_d, renorm = struct.unpack("<HIIB", blob[4:15])
    if version != WHITENING_VERSION:
        raise FormatError(f"unsupported whitening version {version}", path)
    off = 15
    mean = np.frombuffer(blob, dtype="<f4", count=in_d, offset=off).astype(float)
    off += 4 * in_d
    proj = np.frombuffer(blob, dtype="<f4", count=out_d * in_d, offset=off)
    off += 4 * out_d * in_d
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", path)
    return WhitenTransform(
        mean=mean, projection=proj.reshape(out_d, in_d).astype(float), renormalize=bool(renorm)
    )


def write_results_csv(path: str, results: dict[str, list[tuple[str, float]]]) -> None:
    """Ranked matches per query, rank starting at 1, full-precision distances."""
    rows = [RESULTS_HEADER]
    for qid in sorted(results):
        for rank, (mid, dist) in enumerate(results[qid], start=1):
            rows.append(f"{qid},{rank},{mid},{dist:.17g}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_results_csv(path: str) -> dict[str, list[tuple[str, float]]]:
    results: dict[str, list[tuple[str, float]]] = {}
    expected_rank: dict[str, int] = {}
    for i, (qid, rank, mid, dist) in _read_strict_csv(path, RESULTS_HEADER, 4):
        try:
            rank_i = int(rank)
        except ValueError:
            raise FormatError(f"bad rank {rank!r}", path, i) from None
        expected = expected_rank.get(qid, 0) + 1
        if rank_i != expected:
            raise FormatError(f"rank {rank_i} out of order for query {qid!r}", path, i)
        expected_rank[qid] = rank_i
        results.setdefault(qid, []).append((mid, _parse_float(dist, path, i, "distance")))
    if not results:
        raise FormatError("no result rows", path)
    return results


def write_trace_csv(path: str, report) -> None:
    rows = [TRACE_HEADER]
    rows += [
        f"{i},{seen},{lr:.9g},{loss:.17g}"
        for i, (seen, lr, loss) in enumerate(
            zip(report.pairs_seen_history, report.lr_history, report.batch_losses)
        )
    ]
    atomic_write_text(path, "\n".join(rows) + "\n")


def write_metrics_report(path: str, flat: dict) -> None:
    atomic_write_text(path, json.dumps(flat, sort_keys=True, indent=2) + "\n")


def write_curve_csv(path: str, curve) -> None:
    rows = [CURVE_HEADER]
    rows += [f"{t:.9g},{r:.6f}" for t, r in curve]
    atomic_write_text(path, "\n".join(rows) + "\n")
