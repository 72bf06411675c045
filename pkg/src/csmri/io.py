"""File formats and dataset layout.

CKS container (grids, masks, multi-coil stacks)::

    CKS1\\n
    dtype: c128-interleaved-f64\\n      (or c64-interleaved-f32, u8)
    shape: coil=4,y=64,x=64\\n          (axes (coil,)?y,x in order)
    endian: little\\n
    subject_id: subject_000\\n          (optional)
    mask_attached: 1\\n                 (optional flag)
    \\n
    <raw contiguous row-major payload>

Weights container (CKW1): a text manifest with format version, architecture
meta, and a tensor table (name, shape, offset, length), followed by a blob
of concatenated little-endian tensors. Readers validate every header field
before touching the payload and raise :class:`FormatError` naming the
violated field; unknown format versions are refused.

Dataset layout: one directory per subject holding ``truth.cks``,
``sens.cks`` and ``full.cks``; training splits are made by subject
directory, never by slice. All writes are atomic (temp file + rename).
"""

import json
import os
from pathlib import Path

import numpy as np

from .exceptions import CalibrationError, FormatError
from .imaging import MultiCoilKspace, SamplingMask, estimate_sensitivities
from .layers import ConvLayerParams
from .training import TrainingExample
from .unrolled import (
    FeatureExtractorParams,
    PARAMS_FORMAT_VERSION,
    UnrolledModelParams,
    init_feature_extractor,
    init_unrolled,
    named_tensors,
    replace_tensors,
)

CKS_MAGIC = "CKS1"
CKW_MAGIC = "CKW1"

_DTYPES = {
    "c64-interleaved-f32": np.dtype("<c8"),
    "c128-interleaved-f64": np.dtype("<c16"),
    "u8": np.dtype("u1"),
}
_DTYPE_NAMES = {v: k for k, v in _DTYPES.items()}
_CKS_KEYS = {"dtype", "shape", "endian", "subject_id", "mask_attached"}


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _split_header(raw: bytes, magic: str):
    end = raw.find(b"\n\n")
    if end < 0:
        raise FormatError("header", "missing blank-line terminator")
    try:
        text = raw[:end].decode("ascii")
    except UnicodeDecodeError:
        raise FormatError("header", "header is not ASCII") from None
    lines = text.split("\n")
    if not lines or lines[0] != magic:
        raise FormatError("magic", f"expected {magic!r}, got {lines[0]!r}")
    fields: list[tuple[str, str]] = []
    for line in lines[1:]:
        key, sep, value = line.partition(": ")
        if not sep or not key:
            raise FormatError("header", f"malformed line {line!r}")
        fields.append((key, value))
    return fields, raw[end + 2 :]


def _unique_fields(fields, allowed) -> dict:
    out = {}
    for key, value in fields:
        if key not in allowed:
            raise FormatError(key, "unknown header field")
        if key in out:
            raise FormatError(key, "duplicate header field")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# CKS


def write_cks(path, data, subject_id: str | None = None, mask_attached: bool = False) -> None:
    """Write a 2-D (y, x) or 3-D (coil, y, x) array as a CKS file."""
    arr = np.asarray(data)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype == np.uint8:
        dtype = _DTYPES["u8"]
    elif arr.dtype == np.complex64:
        dtype = _DTYPES["c64-interleaved-f32"]
    elif arr.dtype == np.complex128:
        dtype = _DTYPES["c128-interleaved-f64"]
    else:
        raise FormatError("dtype", f"unsupported array dtype {arr.dtype}")
    if arr.ndim == 2:
        labels = ("y", "x")
    elif arr.ndim == 3:
        labels = ("coil", "y", "x")
    else:
        raise FormatError("shape", f"only 2-D/3-D arrays supported, got {arr.ndim}-D")
    shape = ",".join(f"{l}={n}" for l, n in zip(labels, arr.shape))
    lines = [
        CKS_MAGIC,
        f"dtype: {_DTYPE_NAMES[dtype]}",
        f"shape: {shape}",
        "endian: little",
    ]
    if subject_id is not None:
        lines.append(f"subject_id: {subject_id}")
    if mask_attached:
        lines.append("mask_attached: 1")
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    _atomic_write(path, header + np.ascontiguousarray(arr).astype(dtype).tobytes())


def read_cks(path) -> tuple[np.ndarray, dict]:
    """Read a CKS file; returns (array, meta). Validates every header field
    and the payload length before constructing the array."""
    raw = Path(path).read_bytes()
    fields, payload = _split_header(raw, CKS_MAGIC)
    header = _unique_fields(fields, _CKS_KEYS)
    for required in ("dtype", "shape", "endian"):
        if required not in header:
            raise FormatError(required, "missing required header field")
    if header["endian"] != "little":
        raise FormatError("endian", f"unsupported endianness {header['endian']!r}")
    if header["dtype"] not in _DTYPES:
        raise FormatError("dtype", f"unknown dtype {header['dtype']!r}")
    dtype = _DTYPES[header["dtype"]]

    labels, dims = [], []
    for part in header["shape"].split(","):
        name, sep, num = part.partition("=")
        if not sep:
            raise FormatError("shape", f"malformed axis {part!r}")
        if name not in ("coil", "y", "x"):
            raise FormatError("shape", f"unknown axis label {name!r}")
        if name in labels:
            raise FormatError("shape", f"duplicate axis {name!r}")
        try:
            n = int(num)
        except ValueError:
            raise FormatError("shape", f"bad axis size {num!r}") from None
        if n < 1:
            raise FormatError("shape", f"axis size must be positive, got {n}")
        labels.append(name)
        dims.append(n)
    if labels not in (["y", "x"], ["coil", "y", "x"]):
        raise FormatError("shape", f"axis order must be (coil,)y,x; got {labels}")

    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            "payload", f"expected {expected} bytes, found {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    mask_attached = header.get("mask_attached", "0")
    if mask_attached not in ("0", "1"):
        raise FormatError("mask_attached", f"flag must be 0/1, got {mask_attached!r}")
    meta = {
        "dtype": header["dtype"],
        "axes": labels,
        "subject_id": header.get("subject_id"),
        "mask_attached": mask_attached == "1",
    }
    return arr, meta


def write_mask(path, mask: SamplingMask) -> None:
    write_cks(path, mask.mask.astype(np.uint8))


def read_mask(path) -> SamplingMask:
    """Load a u8 mask grid; calibration extents are re-inferred as the
    maximal centered all-ones block."""
    arr, meta = read_cks(path)
    if meta["dtype"] != "u8" or arr.ndim != 2:
        raise FormatError("dtype", "mask files must hold a 2-D u8 grid")
    return SamplingMask.from_grid(arr)


def write_pgm(path, image) -> None:
    """8-bit binary PGM of a magnitude image, max-normalized."""
    mag = np.abs(np.asarray(image)).astype(np.float64)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    pix = np.round(255.0 * mag).astype(np.uint8)
    h, w = pix.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


# ---------------------------------------------------------------------------
# weights


_CKW_COMMON = {"version", "kind", "dtype", "kernel_size"}
_CKW_UNROLLED_KEYS = _CKW_COMMON | {
    "iterations",
    "features",
    "resblocks",
    "share_weights",
    "normalization",
    "tensor",
}
_CKW_EXTRACTOR_KEYS = _CKW_COMMON | {"channels", "strides", "tensor"}


def _parse_int(value, field):
    try:
        return int(value)
    except ValueError:
        raise FormatError(field, f"expected integer, got {value!r}") from None


def _tensor_line(name, arr, offset, dtype):
    shape = "x".join(str(n) for n in arr.shape)
    length = arr.size * dtype.itemsize
    return f"tensor: {name} shape={shape} offset={offset} length={length}", length


def write_weights(path, params, dtype: str = "f64") -> None:
    """Serialize UnrolledModelParams or FeatureExtractorParams."""
    if dtype not in ("f32", "f64"):
        raise FormatError("dtype", f"dtype must be f32/f64, got {dtype!r}")
    np_dtype = np.dtype("<f4") if dtype == "f32" else np.dtype("<f8")
    tensors = named_tensors(params)
    if isinstance(params, UnrolledModelParams):
        meta = params.meta
        lines = [
            CKW_MAGIC,
            f"version: {meta.get('version', PARAMS_FORMAT_VERSION)}",
            "kind: unrolled",
            f"iterations: {params.iterations}",
            f"features: {meta['features']}",
            f"resblocks: {meta['resblocks']}",
            f"kernel_size: {meta['kernel_size']}",
            f"share_weights: {int(bool(meta.get('share_weights')))}",
            f"normalization: {meta['normalization']}",
            f"dtype: {dtype}",
        ]
    elif isinstance(params, FeatureExtractorParams):
        channels = ",".join(str(layer.out_ch) for layer in params.layers)
        strides = ",".join(str(layer.stride) for layer in params.layers)
        lines = [
            CKW_MAGIC,
            f"version: {PARAMS_FORMAT_VERSION}",
            "kind: extractor",
            f"channels: {channels}",
            f"strides: {strides}",
            f"kernel_size: {params.layers[0].kernel.shape[-1]}",
            f"dtype: {dtype}",
        ]
    else:
        raise FormatError("kind", f"unsupported parameter container {type(params)!r}")

    blob = bytearray()
    offset = 0
    for name, arr in tensors:
        line, length = _tensor_line(name, arr, offset, np_dtype)
        lines.append(line)
        blob += np.ascontiguousarray(arr).astype(np_dtype).tobytes()
        offset += length
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    _atomic_write(path, header + bytes(blob))


def _parse_tensor_entries(entries, payload, np_dtype):
    table = {}
    cursor = 0
    for value in entries:
        parts = value.split(" ")
        if len(parts) != 4:
            raise FormatError("tensor", f"malformed tensor entry {value!r}")
        name = parts[0]
        kv = {}
        for p in parts[1:]:
            k, sep, v = p.partition("=")
            if not sep or k not in ("shape", "offset", "length"):
                raise FormatError("tensor", f"malformed tensor attribute {p!r}")
            kv[k] = v
        try:
            shape = tuple(int(n) for n in kv["shape"].split("x"))
        except (KeyError, ValueError):
            raise FormatError("tensor", f"bad shape in entry {value!r}") from None
        offset = _parse_int(kv.get("offset", ""), "tensor")
        length = _parse_int(kv.get("length", ""), "tensor")
        if name in table:
            raise FormatError("tensor", f"duplicate tensor {name!r}")
        if offset != cursor:
            raise FormatError("tensor", f"non-contiguous offset for {name!r}")
        n_items = int(np.prod(shape)) if shape else 1
        if length != n_items * np_dtype.itemsize:
            raise FormatError("tensor", f"length mismatch for {name!r}")
        if offset + length > len(payload):
            raise FormatError("tensor", f"tensor {name!r} exceeds payload")
        arr = np.frombuffer(payload, dtype=np_dtype, count=n_items, offset=offset)
        table[name] = arr.astype(np.float64).reshape(shape)
        cursor = offset + length
    if cursor != len(payload):
        raise FormatError("payload", f"expected {cursor} bytes, found {len(payload)}")
    return table


def read_weights(path):
    """Load a CKW file into the matching parameter container.

    The tensor table must match the architecture meta exactly (every
    expected tensor appears exactly once with the right shape).
    """
    raw = Path(path).read_bytes()
    fields, payload = _split_header(raw, CKW_MAGIC)
    kind = next((v for k, v in fields if k == "kind"), None)
    if kind not in ("unrolled", "extractor"):
        raise FormatError("kind", f"unknown weights kind {kind!r}")
    allowed = _CKW_UNROLLED_KEYS if kind == "unrolled" else _CKW_EXTRACTOR_KEYS
    header = {}
    tensor_entries = []
    for key, value in fields:
        if key not in allowed:
            raise FormatError(key, "unknown header field")
        if key == "tensor":
            tensor_entries.append(value)
            continue
        if key in header:
            raise FormatError(key, "duplicate header field")
        header[key] = value

    version = _parse_int(header.get("version", ""), "version")
    if version != PARAMS_FORMAT_VERSION:
        raise FormatError("version", f"unsupported format version {version}")
    dtype_name = header.get("dtype", "f64")
    if dtype_name not in ("f32", "f64"):
        raise FormatError("dtype", f"dtype must be f32/f64, got {dtype_name!r}")
    np_dtype = np.dtype("<f4") if dtype_name == "f32" else np.dtype("<f8")

    if kind == "unrolled":
        for req in ("iterations", "features", "resblocks", "kernel_size",
                    "share_weights", "normalization"):
            if req not in header:
                raise FormatError(req, "missing required header field")
        iterations = _parse_int(header["iterations"], "iterations")
        features = _parse_int(header["features"], "features")
        resblocks = _parse_int(header["resblocks"], "resblocks")
        kernel_size = _parse_int(header["kernel_size"], "kernel_size")
        share = header["share_weights"]
        if share not in ("0", "1"):
            raise FormatError("share_weights", f"flag must be 0/1, got {share!r}")
        if not (1 <= iterations <= 1024 and 1 <= features <= 4096
                and 0 <= resblocks <= 64 and 1 <= kernel_size <= 63
                and kernel_size % 2 == 1):
            raise FormatError("kind", "architecture meta out of range")
        template = init_unrolled(
            iterations, features, resblocks, kernel_size, seed=0,
            share_weights=share == "1",
        )
        template.meta["normalization"] = header["normalization"]
        template.meta["version"] = version
    else:
        try:
            channels = tuple(int(n) for n in header.get("channels", "").split(","))
            strides = tuple(int(n) for n in header.get("strides", "").split(","))
        except ValueError:
            raise FormatError("channels", "bad channels/strides list") from None
        kernel_size = _parse_int(header.get("kernel_size", ""), "kernel_size")
        if len(channels) != len(strides) or not channels:
            raise FormatError("channels", "channels/strides length mismatch")
        if (not all(1 <= c <= 4096 for c in channels)
                or not all(1 <= s <= 64 for s in strides)
                or not (1 <= kernel_size <= 63) or kernel_size % 2 == 0):
            raise FormatError("channels", "architecture meta out of range")
        template = init_feature_extractor(channels, strides, kernel_size, seed=0)

    table = _parse_tensor_entries(tensor_entries, payload, np_dtype)
    expected = {name: arr.shape for name, arr in named_tensors(template)}
    if set(table) != set(expected):
        missing = set(expected) - set(table)
        extra = set(table) - set(expected)
        raise FormatError(
            "tensor", f"tensor table mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for name, arr in table.items():
        if arr.shape != expected[name]:
            raise FormatError("tensor", f"shape mismatch for {name!r}")
    return replace_tensors(template, table)


# ---------------------------------------------------------------------------
# dataset layout


def save_subject(subject_dir, truth, sens, full_kspace, subject_id=None) -> None:
    subject_dir = Path(subject_dir)
    subject_dir.mkdir(parents=True, exist_ok=True)
    sid = subject_id or subject_dir.name
    write_cks(subject_dir / "truth.cks", np.asarray(truth, dtype=np.complex128), sid)
    write_cks(subject_dir / "sens.cks", np.asarray(sens, dtype=np.complex128), sid)
    data = full_kspace.data if isinstance(full_kspace, MultiCoilKspace) else full_kspace
    write_cks(subject_dir / "full.cks", np.asarray(data, dtype=np.complex128), sid)


def subject_dirs(data_dir) -> list[Path]:
    root = Path(data_dir)
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_dataset(
    data_dir,
    mask: SamplingMask,
    sens_from: str = "file",
    calib_shape: tuple[int, int] | None = None,
) -> list[TrainingExample]:
    """Build normalized training examples from a subject-per-directory tree.

    ``sens_from``: "file" reads each subject's sens.cks; "estimate" derives
    maps from the calibration block of full.cks (requires ``calib_shape``).
    """
    examples = []
    for sub in subject_dirs(data_dir):
        truth, meta = read_cks(sub / "truth.cks")
        if sens_from == "estimate":
            if calib_shape is None:
                raise CalibrationError("calib_shape required for sens_from='estimate'")
            full, _ = read_cks(sub / "full.cks")
            sens = estimate_sensitivities(full, calib_shape)
        else:
            sens, _ = read_cks(sub / "sens.cks")
        sid = meta.get("subject_id") or sub.name
        examples.append(
            TrainingExample.from_truth(
                truth.astype(np.complex128),
                sens.astype(np.complex128),
                mask,
                subject_id=sid,
            )
        )
    if not examples:
        raise FormatError("header", f"no subject directories under {data_dir}")
    return examples


def split_by_subject(examples, val_fraction: float, seed: int = 0):
    """Split train/validation by subject id, never by slice."""
    subjects = sorted({ex.subject_id for ex in examples})
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(subjects)))
    n_val = int(round(val_fraction * len(subjects)))
    val_ids = {subjects[i] for i in order[:n_val]}
    train = [ex for ex in examples if ex.subject_id not in val_ids]
    val = [ex for ex in examples if ex.subject_id in val_ids]
    return train, val


def write_metric_report(path, reports: list, names: list[str]) -> None:
    """Delimited-text metric table plus a JSON sidecar (same stem, .json)."""
    path = Path(path)
    lines = ["slice\tpsnr_db\tnrmse\tssim\tmse"]
    for name, rep in zip(names, reports):
        lines.append(
            f"{name}\t{rep.psnr:.6f}\t{rep.nrmse:.8f}\t{rep.ssim:.8f}\t{rep.mse:.8e}"
        )
    arr = {
        "psnr": [r.psnr for r in reports],
        "nrmse": [r.nrmse for r in reports],
        "ssim": [r.ssim for r in reports],
        "mse": [r.mse for r in reports],
    }
    agg = {}
    for key, vals in arr.items():
        finite = [v for v in vals if np.isfinite(v)]
        agg[key] = {
            "mean": float(np.mean(finite)) if finite else float("inf"),
            "std": float(np.std(finite)) if finite else 0.0,
        }
    lines.append(
        "aggregate\t{:.6f}±{:.6f}\t{:.8f}±{:.8f}\t{:.8f}±{:.8f}\t{:.8e}±{:.8e}".format(
            agg["psnr"]["mean"], agg["psnr"]["std"],
            agg["nrmse"]["mean"], agg["nrmse"]["std"],
            agg["ssim"]["mean"], agg["ssim"]["std"],
            agg["mse"]["mean"], agg["mse"]["std"],
        )
    )
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    sidecar = {
        "slices": [
            {"name": name, "psnr": r.psnr, "nrmse": r.nrmse, "ssim": r.ssim, "mse": r.mse}
            for name, r in zip(names, reports)
        ],
        "aggregate": agg,
    }
    _atomic_write(
        path.with_suffix(".json"),
        json.dumps(sidecar, indent=2, default=float).encode("utf-8"),
    )
