"""File formats: PNG (LDR), Radiance .hdr and PFM (HDR), and the versioned
binary checkpoint container."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import cv2
import numpy as np
import torch

# -- images ------------------------------------------------------------------


def save_png(path, img: np.ndarray) -> None:
    """Save a float image in [0, 1] (H, W, 3|4) as 8-bit PNG (linear x 255)."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    if u8.ndim == 3 and u8.shape[2] == 4:
        bgr = cv2.cvtColor(u8, cv2.COLOR_RGBA2BGRA)
    elif u8.ndim == 3:
        bgr = cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)
    else:
        bgr = u8
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"failed to write PNG: {path}")


def load_png(path) -> np.ndarray:
    """Load a PNG as float in [0, 1]; RGBA kept if present, no sRGB decode."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    if raw.ndim == 3 and raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGBA)
    elif raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return raw.astype(np.float64) / 255.0


def save_hdr(path, img: np.ndarray) -> None:
    """Save a linear HDR image (H, W, 3) as Radiance .hdr."""
    bgr = cv2.cvtColor(np.asarray(img, dtype=np.float32), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"failed to write HDR: {path}")


def load_hdr(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read HDR image: {path}")
    return cv2.cvtColor(raw.astype(np.float32), cv2.COLOR_BGR2RGB).astype(np.float64)


def save_pfm(path, img: np.ndarray) -> None:
    """Save (H, W, 3) or (H, W) float32 as little-endian PFM."""
    img = np.asarray(img, dtype=np.float32)
    color = img.ndim == 3
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{img.shape[1]} {img.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(img).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: {path}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    nch = 3 if header == b"PF" else 1
    img = data.reshape(h, w, nch) if nch == 3 else data.reshape(h, w)
    return np.flipud(img).astype(np.float64)


def load_envmap(path) -> np.ndarray:
    """Load an equirect HDR environment (.hdr or .pfm) as (H, W, 3) float."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        img = load_pfm(path)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        return img
    return load_hdr(path)


# -- checkpoint container ----------------------------------------------------

MAGIC = b"GLOSSPLT"
VERSION = 1

_DTYPES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1, np.dtype("<i8"): 2,
           np.dtype("uint8"): 3}
_DTYPES_INV = {v: k for k, v in _DTYPES.items()}


def save_tensors(path, tensors: dict[str, np.ndarray],
                 meta: dict | None = None) -> None:
    """Write named arrays plus a JSON metadata blob, little-endian, bitwise
    round-trippable."""
    items = dict(tensors)
    if meta is not None:
        items["__meta__"] = np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8).copy()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name in sorted(items):
            arr = np.ascontiguousarray(items[name])
            if arr.dtype not in _DTYPES:
                arr = arr.astype("<f8")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _DTYPES[arr.dtype], arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())


def load_tensors(path):
    """Inverse of save_tensors -> (tensors dict, meta dict or None)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version} "
                         f"(expected {VERSION})")
    off = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode()
            off += nlen
            dt, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, off)
            off += 8 * ndim
            dtype = _DTYPES_INV[dt]
            nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
            payload = blob[off:off + nbytes]
            if len(payload) != nbytes:
                raise ValueError("truncated checkpoint payload")
            out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
            off += nbytes
    except (struct.error, IndexError) as e:
        raise ValueError(f"truncated or corrupt checkpoint: {path}") from e
    meta = None
    if "__meta__" in out:
        meta = json.loads(out.pop("__meta__").tobytes().decode())
    return out, meta


def save_checkpoint(path, model, config: dict | None = None) -> None:
    """Serialize a SceneModel; bitwise round-trip with load_checkpoint."""
    tensors = {name: p.detach().numpy() for name, p in model.parameters().items()}
    meta = {
        "env_levels": model.env_levels,
        "env_spp": model.env_spp,
        "env_seed": model.env_seed,
        "mlp_hidden": model.mlp.fc1.out_features,
        "config": config or {},
    }
    save_tensors(path, tensors, meta)


def load_checkpoint(path):
    """Load a SceneModel (plus the echoed train config dict)."""
    from .pipeline import SceneModel
    from .residual import ResidualMLP, SphericalFeatureMipmap
    from .surfels import SurfelCloud

    tensors, meta = load_tensors(path)
    if meta is None:
        raise ValueError(f"checkpoint missing metadata: {path}")
    known = set(SurfelCloud.PARAM_NAMES) | {"env_base", "mipmap", "sh_coeffs"}
    for name in tensors:
        if name not in known and not name.startswith("mlp."):
            raise ValueError(f"unknown tensor in checkpoint: {name}")
    t = {k: torch.from_numpy(v) for k, v in tensors.items()}
    cloud = SurfelCloud(**{k: t[k] for k in SurfelCloud.PARAM_NAMES})
    mipmap = SphericalFeatureMipmap(t["mipmap"])
    enc_dim = mipmap.channels
    feat_dim = cloud.feature_dim
    mlp = ResidualMLP(enc_dim, feat_dim, hidden=meta["mlp_hidden"])
    with torch.no_grad():
        for name, p in mlp.named_parameters():
            p.copy_(t[f"mlp.{name}"])
    model = SceneModel(cloud, t["env_base"], mipmap, mlp,
                       env_levels=meta["env_levels"], env_spp=meta["env_spp"],
                       env_seed=meta["env_seed"],
                       sh_coeffs=t.get("sh_coeffs"))
    return model, meta.get("config", {})
