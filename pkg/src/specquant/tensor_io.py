"""Bit-exact, language-neutral I/O for matrices and compressed-layer artifacts.

Matrices travel as NPY v1.0/2.0 files (C or Fortran order accepted, always
normalized to row-major float64 in memory). A compressed layer is a
directory holding `manifest.json` plus three raw little-endian blobs:

- ``lambda.bin``    c_in float64 smoothing factors
- ``spectra.bin``   per channel, in order: retained (amplitude, phase)
                    float64 pairs, 2 * k_j values; the per-channel counts
                    come from the manifest's budget plan
- ``residual.bin``  integer codes, row-major; two codes per byte (low
                    nibble first) when residual_bits <= 4, one byte per
                    code otherwise

Everything else (plan, quantizer scales, migration strength) lives in the
manifest, which JSON round-trips float64 exactly via shortest-repr.
"""

import json
import os

import numpy as np

from .budget import BudgetPlan
from .errors import DataError, FormatError, ShapeError
from .pipeline import CompressedLayer, SmoothingFactors
from .quant import QuantizedTensor
from .spectral import ChannelSpectrum, half_spectrum_length
from .validation import as_matrix

FORMAT_VERSION = "specquant/1"
MANIFEST_FILE = "manifest.json"
LAMBDA_FILE = "lambda.bin"
SPECTRA_FILE = "spectra.bin"
RESIDUAL_FILE = "residual.bin"

_NPY_MAGIC = b"\x93NUMPY"


def load_matrix(path):
    """Read a 2-D float NPY file as a row-major float64 matrix.

    Raises FormatError for a malformed container, ShapeError for wrong
    ndim/dtype, DataError (naming the index) for non-finite values.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_NPY_MAGIC)) != _NPY_MAGIC:
                raise FormatError(f"{path}: not an NPY file (bad magic)")
            fh.seek(0)
            arr = np.lib.format.read_array(fh, allow_pickle=False)
    except FormatError:
        raise
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: malformed NPY header ({exc})") from exc
    if arr.ndim != 2:
        raise ShapeError(f"{path}: expected a 2-D array, got {arr.ndim}-D")
    if arr.dtype not in (np.float32, np.float64):
        raise ShapeError(f"{path}: expected float32/float64 data, got {arr.dtype}")
    data = np.ascontiguousarray(arr, dtype=np.float64)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"{path}: non-finite value at index ({i}, {j})")
    return data


def save_matrix(matrix, path):
    """Write a matrix as NPY v1.0 (row-major float64)."""
    m = as_matrix(matrix, "matrix")
    with open(os.fspath(path), "wb") as fh:
        np.lib.format.write_array(fh, m)


def pack_codes(codes, bits):
    """Pack integer codes row-major; nibble-packed for bits <= 4."""
    flat = np.ascontiguousarray(codes, dtype=np.uint8).ravel()
    if bits <= 4:
        if flat.size % 2:
            flat = np.append(flat, np.uint8(0))
        return (flat[0::2] | (flat[1::2] << 4)).tobytes()
    return flat.tobytes()


def unpack_codes(data, bits, rows, cols):
    count = rows * cols
    if bits <= 4:
        raw = np.frombuffer(data, dtype=np.uint8)
        if raw.size != (count + 1) // 2:
            raise ShapeError(
                f"residual blob holds {raw.size} bytes, expected {(count + 1) // 2}"
            )
        flat = np.empty(raw.size * 2, dtype=np.uint8)
        flat[0::2] = raw & 0x0F
        flat[1::2] = raw >> 4
        flat = flat[:count]
    else:
        flat = np.frombuffer(data, dtype=np.uint8).copy()
        if flat.size != count:
            raise ShapeError(f"residual blob holds {flat.size} codes, expected {count}")
    return flat.reshape(rows, cols)


def spectrum_to_bytes(spec):
    """Serialize retained bins as little-endian (amplitude, phase) pairs.

    The payload is exactly 2 * retained float64 values; the bin frequency is
    implicit in the pair's position.
    """
    buf = np.empty(2 * spec.retained, dtype="<f8")
    buf[0::2] = spec.amps
    buf[1::2] = spec.phases
    return buf.tobytes()


def spectrum_from_bytes(data, n):
    buf = np.frombuffer(data, dtype="<f8")
    if buf.size % 2:
        raise ShapeError("spectrum payload does not split into (amp, phase) pairs")
    try:
        return ChannelSpectrum(n=n, amps=buf[0::2].copy(), phases=buf[1::2].copy())
    except ValueError as exc:
        raise DataError(f"invalid spectrum payload: {exc}") from exc


def save_compressed_layer(layer, out_dir, *, layer_name="layer", budget_meta=None):
    """Write manifest + blobs; returns the manifest dict.

    A subsequent `load_compressed_layer` reproduces the layer bit-exactly.
    """
    layer.validate()
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    if budget_meta is None:
        budget_meta = {
            "metric": None,
            "temperature": layer.plan.alpha,
            "compression_ratio": None,
        }
    r = layer.residual
    manifest = {
        "format_version": FORMAT_VERSION,
        "layer_name": layer_name,
        "c_in": layer.c_in,
        "c_out": layer.c_out,
        "smoothing_factors": LAMBDA_FILE,
        "spectra": SPECTRA_FILE,
        "residual": RESIDUAL_FILE,
        "budget_meta": budget_meta,
        "residual_bits": r.bits,
        "migration_strength": layer.smoothing.migration_strength,
        "plan": {
            "rho": [float(v) for v in layer.plan.rho],
            "k": [int(v) for v in layer.plan.k],
            "alpha": layer.plan.alpha,
            "total_budget": layer.plan.total_budget,
        },
        "residual_params": {
            "granularity": r.granularity,
            "delta": [float(v) for v in r.deltas],
            "zero_point": [float(v) for v in r.zero_points],
            "rtn_fallback": bool(r.rtn_fallback),
        },
    }
    with open(os.path.join(out_dir, LAMBDA_FILE), "wb") as fh:
        fh.write(layer.smoothing.lam.astype("<f8").tobytes())
    with open(os.path.join(out_dir, SPECTRA_FILE), "wb") as fh:
        for sp in layer.spectra:
            fh.write(spectrum_to_bytes(sp))
    with open(os.path.join(out_dir, RESIDUAL_FILE), "wb") as fh:
        fh.write(pack_codes(r.codes, r.bits))
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(artifact_dir):
    path = os.path.join(os.fspath(artifact_dir), MANIFEST_FILE)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: format_version {version!r} is not {FORMAT_VERSION!r}"
        )
    required = (
        "layer_name", "c_in", "c_out", "smoothing_factors", "spectra",
        "residual", "budget_meta", "residual_bits", "plan", "residual_params",
        "migration_strength",
    )
    missing = [key for key in required if key not in manifest]
    if missing:
        raise FormatError(f"{path}: manifest is missing keys {missing}")
    return manifest


def _read_blob(artifact_dir, name):
    with open(os.path.join(os.fspath(artifact_dir), name), "rb") as fh:
        return fh.read()


def load_compressed_layer(artifact_dir):
    """Rebuild a CompressedLayer from an artifact directory, validating the
    manifest's declared shapes against the blobs."""
    manifest = load_manifest(artifact_dir)
    c_in = int(manifest["c_in"])
    c_out = int(manifest["c_out"])
    if c_in < 0 or c_out < 0:
        raise ShapeError(f"invalid dimensions c_in={c_in}, c_out={c_out}")
    plan_spec = manifest["plan"]
    ks = [int(v) for v in plan_spec["k"]]
    rho = [float(v) for v in plan_spec["rho"]]
    if len(ks) != c_out or len(rho) != c_out:
        raise ShapeError(f"plan length {len(ks)} does not match c_out={c_out}")
    half = half_spectrum_length(c_in)
    for j, k in enumerate(ks):
        if not 1 <= k <= half:
            raise ShapeError(f"plan k[{j}]={k} outside [1, {half}] for c_in={c_in}")

    lam_raw = _read_blob(artifact_dir, manifest["smoothing_factors"])
    if len(lam_raw) != 8 * c_in:
        raise ShapeError(
            f"lambda blob holds {len(lam_raw)} bytes, expected {8 * c_in} for c_in={c_in}"
        )
    lam = np.frombuffer(lam_raw, dtype="<f8").copy()
    if lam.size and (not np.isfinite(lam).all() or (lam <= 0).any()):
        raise DataError("smoothing factors must be positive and finite")

    spectra_raw = _read_blob(artifact_dir, manifest["spectra"])
    expected = 16 * sum(ks)
    if len(spectra_raw) != expected:
        raise ShapeError(
            f"spectra blob holds {len(spectra_raw)} bytes, expected {expected}"
        )
    spectra = []
    offset = 0
    for k in ks:
        size = 16 * k
        spectra.append(spectrum_from_bytes(spectra_raw[offset : offset + size], c_in))
        offset += size

    bits = int(manifest["residual_bits"])
    rp = manifest["residual_params"]
    deltas = np.asarray([float(v) for v in rp["delta"]], dtype=np.float64)
    zps = np.asarray([float(v) for v in rp["zero_point"]], dtype=np.float64)
    if rp["granularity"] != "per_channel":
        raise FormatError(f"unsupported residual granularity {rp['granularity']!r}")
    if deltas.size != c_out or zps.size != c_out:
        raise ShapeError("residual quantizer params do not match c_out")
    if deltas.size and (not np.isfinite(deltas).all() or (deltas <= 0).any()):
        raise DataError("residual deltas must be positive and finite")
    codes = unpack_codes(_read_blob(artifact_dir, manifest["residual"]), bits, c_in, c_out)
    if codes.size and int(codes.max()) > 2**bits - 1:
        raise DataError(f"residual codes exceed {bits}-bit range")
    residual = QuantizedTensor(
        codes=codes,
        bits=bits,
        granularity="per_channel",
        deltas=deltas,
        zero_points=zps,
        rows=c_in,
        cols=c_out,
        rtn_fallback=bool(rp.get("rtn_fallback", False)),
    )
    layer = CompressedLayer(
        smoothing=SmoothingFactors(
            lam=lam, migration_strength=float(manifest["migration_strength"])
        ),
        spectra=spectra,
        residual=residual,
        plan=BudgetPlan(
            rho=np.asarray(rho),
            k=np.asarray(ks, dtype=np.int64),
            alpha=float(plan_spec["alpha"]),
            total_budget=int(plan_spec["total_budget"]),
        ),
        c_in=c_in,
        c_out=c_out,
    )
    layer.validate()
    return layer
