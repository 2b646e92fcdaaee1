"""Writers for the engine's container and raw image formats.

Implemented against the documented formats only, deliberately sharing no
code with the engine, so each side's serializer checks the other.

Container directory:
  manifest.json  format_version, kind, config, tensor directory (name,
                 dtype, shape, offset, nbytes; offsets contiguous from 0),
                 metadata, quantizer table, bn_eps; serialized with
                 sort_keys and indent=1 plus a trailing newline.
  blob.bin       tensors as raw little-endian float32 in directory order.

Token-mixing matrices are stored [in, out]; torch Linear keeps [out, in],
so those transpose on the way out. Conv kernels are [out, in, kh, kw] on
both sides. Raw images are an ASCII "C H W" line plus planar float32.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import QatTransformer

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "blob.bin"

_BN_FIELDS = ("gamma", "beta", "mean", "var")


def _f4(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")


def _bn_tensors(prefix: str, bn: torch.nn.BatchNorm1d | torch.nn.BatchNorm2d,
                out: list[tuple[str, np.ndarray]]) -> float:
    out.append((f"{prefix}.gamma", _f4(bn.weight)))
    out.append((f"{prefix}.beta", _f4(bn.bias)))
    out.append((f"{prefix}.mean", _f4(bn.running_mean)))
    out.append((f"{prefix}.var", _f4(bn.running_var)))
    return bn.eps


def collect_tensors(model: QatTransformer) -> tuple[list[tuple[str, np.ndarray]], float]:
    """Tensors in container order plus the (single) BN epsilon."""
    out: list[tuple[str, np.ndarray]] = []
    eps_seen: set[float] = set()
    for i, stage in enumerate(model.stages, start=1):
        out.append((f"tok{i}.conv.weight", _f4(stage.conv.weight)))
        out.append((f"tok{i}.conv.bias", _f4(stage.conv.bias)))
        eps_seen.add(_bn_tensors(f"tok{i}.bn", stage.bn, out))
    for l, block in enumerate(model.blocks, start=1):
        att, mlp = block.att, block.mlp
        projections = (("q", att.proj_q, att.bn_q), ("k", att.proj_k, att.bn_k),
                       ("v", att.proj_v, att.bn_v), ("o", att.proj_o, att.bn_o))
        for part, proj, bn in projections:
            out.append((f"blk{l}.att.w{part}", _f4(proj.weight.T)))
            out.append((f"blk{l}.att.b{part}", _f4(proj.bias)))
            eps_seen.add(_bn_tensors(f"blk{l}.att.bn{part}", bn.bn, out))
        out.append((f"blk{l}.mlp.w1", _f4(mlp.fc1.weight.T)))
        out.append((f"blk{l}.mlp.b1", _f4(mlp.fc1.bias)))
        eps_seen.add(_bn_tensors(f"blk{l}.mlp.bn1", mlp.bn1.bn, out))
        out.append((f"blk{l}.mlp.w2", _f4(mlp.fc2.weight.T)))
        out.append((f"blk{l}.mlp.b2", _f4(mlp.fc2.bias)))
        eps_seen.add(_bn_tensors(f"blk{l}.mlp.bn2", mlp.bn2.bn, out))
    out.append(("head.weight", _f4(model.head.weight.T)))
    out.append(("head.bias", _f4(model.head.bias)))
    if len(eps_seen) != 1:
        raise ValueError(f"layers disagree on BN eps: {sorted(eps_seen)}")
    return out, eps_seen.pop()


def export_container(model: QatTransformer, path) -> Path:
    """Write the trained model as an analog-kind container directory."""
    path = Path(path)
    tensors, bn_eps = collect_tensors(model)

    directory = []
    blob = bytearray()
    for name, arr in tensors:
        raw = arr.tobytes()
        directory.append({"name": name, "dtype": "float32", "shape": list(arr.shape),
                          "offset": len(blob), "nbytes": len(raw)})
        blob += raw

    quantizers = {}
    for site, q in model.quantizers().items():
        step = float(q.step.detach().item())
        if not (step > 0.0):
            raise ValueError(f"site {site} has non-positive step {step}")
        quantizers[site] = {"step": step, "levels": int(q.levels)}

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "ann",
        "config": model.arch.container_config(model.levels),
        "tensors": directory,
        "metadata": {},
        "quantizers": quantizers,
        "bn_eps": bn_eps,
    }
    path.mkdir(parents=True, exist_ok=True)
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    (path / BLOB_NAME).write_bytes(bytes(blob))
    return path


def write_raw_image(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"image must be [C,H,W], got shape {image.shape}")
    c, h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"{c} {h} {w}\n".encode("ascii"))
        f.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_raw_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline()
        c, h, w = (int(v) for v in header.split())
        payload = f.read()
    count = c * h * w
    if len(payload) != 4 * count:
        raise ValueError(f"image payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4", count=count).reshape(c, h, w)


def export_images(out_dir, images: np.ndarray, labels: np.ndarray) -> list[Path]:
    """Write each [C,H,W] image as NNNN.img plus a labels.json sidecar.

    File names sort in index order, matching how the engine CLI batches a
    directory of images.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    names = {}
    for idx, image in enumerate(images):
        name = f"{idx:04d}.img"
        write_raw_image(out_dir / name, image)
        names[name] = int(labels[idx])
        paths.append(out_dir / name)
    (out_dir / "labels.json").write_text(
        json.dumps(names, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return paths
