"""Model containers and raw image files.

A container is a directory holding:
  * manifest.json - format version, kind ("ann" or "snn"), architecture
    config, quantizer table, tensor directory (name, dtype, shape, byte
    offset, length), and for spiking models the threshold table, the list
    of temporally decomposed sites, and the time window;
  * blob.bin - every tensor, raw little-endian float32, concatenated in
    manifest order.

Steps and thresholds live in the manifest as JSON numbers (exact float64
round trip); tensor data is stored at 32-bit precision.

Images are standalone files: one ASCII header line "C H W" followed by
C*H*W little-endian float32 values, planar channel-first.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .convert import (NEURON_KINDS, NeuronSite, SpikingAttention, SpikingBlock,
                      SpikingMlp, SpikingModel, SpikingStage, TdecSite)
from .errors import (BlobError, ConfigError, IncompleteModelError, ManifestError,
                     ShapeError)
from .model import (AttentionParams, Block, Head, MlpParams, ModelConfig,
                    TokenizerStage, TransformerModel)
from .quant import BNParams, QuantParams
from .tensor_ops import ConvSpec

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "blob.bin"

_BN_FIELDS = ("gamma", "beta", "mean", "var")


def _ann_tensor_plan(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    plan: list[tuple[str, tuple]] = []
    in_ch = cfg.image[0]
    for i, st in enumerate(cfg.conv_stages, start=1):
        plan.append((f"tok{i}.conv.weight", (st.out_channels, in_ch, st.kernel, st.kernel)))
        plan.append((f"tok{i}.conv.bias", (st.out_channels,)))
        for f in _BN_FIELDS:
            plan.append((f"tok{i}.bn.{f}", (st.out_channels,)))
        in_ch = st.out_channels
    d, hid = cfg.embed_dim, cfg.mlp_hidden
    for l in range(1, cfg.blocks + 1):
        for part in ("q", "k", "v", "o"):
            plan.append((f"blk{l}.att.w{part}", (d, d)))
            plan.append((f"blk{l}.att.b{part}", (d,)))
            for f in _BN_FIELDS:
                plan.append((f"blk{l}.att.bn{part}.{f}", (d,)))
        plan.append((f"blk{l}.mlp.w1", (d, hid)))
        plan.append((f"blk{l}.mlp.b1", (hid,)))
        for f in _BN_FIELDS:
            plan.append((f"blk{l}.mlp.bn1.{f}", (hid,)))
        plan.append((f"blk{l}.mlp.w2", (hid, d)))
        plan.append((f"blk{l}.mlp.b2", (d,)))
        for f in _BN_FIELDS:
            plan.append((f"blk{l}.mlp.bn2.{f}", (d,)))
    plan.append(("head.weight", (d, cfg.classes)))
    plan.append(("head.bias", (cfg.classes,)))
    return plan


def _snn_tensor_plan(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    plan = [(n, s) for n, s in _ann_tensor_plan(cfg) if ".bn" not in n]
    return plan


def _ann_tensors(model: TransformerModel) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for i, st in enumerate(model.tokenizer, start=1):
        if st.bn is None:
            raise IncompleteModelError(
                f"tok{i} has folded BN; save the spiking form instead"
            )
        out[f"tok{i}.conv.weight"] = st.conv.kernel
        out[f"tok{i}.conv.bias"] = st.conv.bias
        for f in _BN_FIELDS:
            out[f"tok{i}.bn.{f}"] = getattr(st.bn, f)
    for blk in model.blocks:
        a, m = blk.attn, blk.mlp
        parts = {"q": (a.wq, a.bq, a.bn_q), "k": (a.wk, a.bk, a.bn_k),
                 "v": (a.wv, a.bv, a.bn_v), "o": (a.wo, a.bo, a.bn_o)}
        for part, (w, b, bn) in parts.items():
            if bn is None:
                raise IncompleteModelError(
                    f"{blk.name}.att.{part} has folded BN; save the spiking form instead"
                )
            out[f"{blk.name}.att.w{part}"] = w
            out[f"{blk.name}.att.b{part}"] = b
            for f in _BN_FIELDS:
                out[f"{blk.name}.att.bn{part}.{f}"] = getattr(bn, f)
        if m.bn1 is None or m.bn2 is None:
            raise IncompleteModelError(
                f"{blk.name}.mlp has folded BN; save the spiking form instead"
            )
        out[f"{blk.name}.mlp.w1"] = m.w1
        out[f"{blk.name}.mlp.b1"] = m.b1
        out[f"{blk.name}.mlp.w2"] = m.w2
        out[f"{blk.name}.mlp.b2"] = m.b2
        for f in _BN_FIELDS:
            out[f"{blk.name}.mlp.bn1.{f}"] = getattr(m.bn1, f)
            out[f"{blk.name}.mlp.bn2.{f}"] = getattr(m.bn2, f)
    out["head.weight"] = model.head.weight
    out["head.bias"] = model.head.bias
    return out


def _snn_tensors(model: SpikingModel) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for i, st in enumerate(model.tokenizer, start=1):
        out[f"tok{i}.conv.weight"] = st.conv.kernel
        out[f"tok{i}.conv.bias"] = st.conv.bias
    for blk in model.blocks:
        a, m = blk.attn, blk.mlp
        for part, w, b in (("q", a.wq, a.bq), ("k", a.wk, a.bk),
                           ("v", a.wv, a.bv), ("o", a.wo, a.bo)):
            out[f"{blk.name}.att.w{part}"] = w
            out[f"{blk.name}.att.b{part}"] = b
        out[f"{blk.name}.mlp.w1"] = m.w1
        out[f"{blk.name}.mlp.b1"] = m.b1
        out[f"{blk.name}.mlp.w2"] = m.w2
        out[f"{blk.name}.mlp.b2"] = m.b2
    out["head.weight"] = model.head.weight
    out["head.bias"] = model.head.bias
    return out


def save(model: TransformerModel | SpikingModel, path) -> None:
    """Write a container directory (created if needed) for either model kind."""
    path = Path(path)
    if isinstance(model, SpikingModel):
        kind = "snn"
        cfg = model.config
        plan = _snn_tensor_plan(cfg)
        tensors = _snn_tensors(model)
    else:
        kind = "ann"
        cfg = model.config
        missing = [n for n in cfg.site_names() if n not in model.sites]
        if missing:
            raise IncompleteModelError(f"model is missing quantizer steps for {missing[:3]}")
        plan = _ann_tensor_plan(cfg)
        tensors = _ann_tensors(model)

    directory = []
    blob = bytearray()
    for name, shape in plan:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        if arr.shape != shape:
            raise IncompleteModelError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        raw = arr.tobytes()
        directory.append({"name": name, "dtype": "float32", "shape": list(shape),
                          "offset": len(blob), "nbytes": len(raw)})
        blob += raw

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": cfg.to_dict(),
        "tensors": directory,
        "metadata": {},
    }
    if kind == "ann":
        manifest["quantizers"] = {
            name: {"step": model.sites[name].step, "levels": model.sites[name].levels}
            for name in cfg.site_names()
        }
        manifest["bn_eps"] = model.tokenizer[0].bn.eps
    else:
        manifest["time_window"] = model.time_window
        manifest["thresholds"] = {
            s.name: {"kind": s.kind, "step": s.step, "levels": s.levels,
                     "theta": s.theta, "theta_fire": s.theta_fire,
                     "presyn": [[n, th] for n, th in s.presyn]}
            for s in model.neurons().values()
        }
        manifest["tdec_sites"] = [{"name": t.name, "kind": t.kind} for t in model.tdec_sites]

    path.mkdir(parents=True, exist_ok=True)
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    (path / BLOB_NAME).write_bytes(bytes(blob))


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container's manifest and tensor table (float64 values).

    This is the low-level half of load(); it validates the directory/blob
    geometry but knows nothing about model structure.
    """
    path = Path(path)
    try:
        text = (path / MANIFEST_NAME).read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ManifestError(f"no {MANIFEST_NAME} in {path}") from e
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"malformed manifest: {e}") from e
    if not isinstance(manifest, dict):
        raise ManifestError("manifest must be a JSON object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ManifestError(
            f"unsupported format version {manifest.get('format_version')!r}"
        )
    if manifest.get("kind") not in ("ann", "snn"):
        raise ManifestError(f"unknown container kind {manifest.get('kind')!r}")
    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise ManifestError("manifest has no tensor directory")

    blob = (path / BLOB_NAME).read_bytes()
    tensors: dict[str, np.ndarray] = {}
    cursor = 0
    for e in entries:
        try:
            name, dtype = e["name"], e["dtype"]
            shape = tuple(int(v) for v in e["shape"])
            offset, nbytes = int(e["offset"]), int(e["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad tensor entry {e!r}") from exc
        if dtype != "float32":
            raise ManifestError(f"tensor {name} has unsupported dtype {dtype!r}")
        count = int(np.prod(shape)) if shape else 1
        if nbytes != 4 * count:
            raise ManifestError(f"tensor {name}: {nbytes} bytes for shape {shape}")
        if offset != cursor:
            raise ManifestError(f"tensor {name}: offset {offset} not contiguous at {cursor}")
        if offset + nbytes > len(blob):
            raise BlobError(
                f"tensor {name} runs past the blob ({offset + nbytes} > {len(blob)})"
            )
        if name in tensors:
            raise ManifestError(f"duplicate tensor {name}")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        tensors[name] = data.reshape(shape).astype(np.float64)
        cursor = offset + nbytes
    if cursor != len(blob):
        raise BlobError(f"blob has {len(blob) - cursor} trailing bytes")
    return manifest, tensors


def _bn_from(tensors: dict[str, np.ndarray], prefix: str, eps: float) -> BNParams:
    return BNParams(*(tensors[f"{prefix}.{f}"] for f in _BN_FIELDS), eps=eps)


def _load_config(manifest: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise ManifestError(f"bad config section: {e}") from e


def _take(tensors: dict[str, np.ndarray], plan: list[tuple[str, tuple]]) -> None:
    for name, shape in plan:
        if name not in tensors:
            raise IncompleteModelError(f"container is missing tensor {name}")
        if tensors[name].shape != shape:
            raise ManifestError(
                f"tensor {name} has shape {tensors[name].shape}, config expects {shape}"
            )
    extra = set(tensors) - {n for n, _ in plan}
    if extra:
        raise ManifestError(f"unexpected tensors {sorted(extra)[:3]}")


def _load_ann(manifest: dict, tensors: dict[str, np.ndarray]) -> TransformerModel:
    cfg = _load_config(manifest)
    _take(tensors, _ann_tensor_plan(cfg))
    eps = float(manifest.get("bn_eps", 1e-5))
    quants = manifest.get("quantizers")
    if not isinstance(quants, dict):
        raise ManifestError("container has no quantizer table")
    sites: dict[str, QuantParams] = {}
    for name in cfg.site_names():
        if name not in quants:
            raise IncompleteModelError(f"quantizer table is missing site {name}")
        entry = quants[name]
        try:
            sites[name] = QuantParams(float(entry["step"]), int(entry["levels"]))
        except (KeyError, TypeError, ValueError, ConfigError) as e:
            raise ManifestError(f"bad quantizer entry for {name}: {e}") from e

    tokenizer = []
    for i, st in enumerate(cfg.conv_stages, start=1):
        spec = ConvSpec(tensors[f"tok{i}.conv.weight"], tensors[f"tok{i}.conv.bias"],
                        (st.stride, st.stride), (st.padding, st.padding))
        tokenizer.append(TokenizerStage(spec, _bn_from(tensors, f"tok{i}.bn", eps),
                                        f"tok{i}", st.pool if st.maxpool else None))
    blocks = []
    for l in range(1, cfg.blocks + 1):
        attn = AttentionParams(
            wq=tensors[f"blk{l}.att.wq"], bq=tensors[f"blk{l}.att.bq"],
            wk=tensors[f"blk{l}.att.wk"], bk=tensors[f"blk{l}.att.bk"],
            wv=tensors[f"blk{l}.att.wv"], bv=tensors[f"blk{l}.att.bv"],
            wo=tensors[f"blk{l}.att.wo"], bo=tensors[f"blk{l}.att.bo"],
            bn_q=_bn_from(tensors, f"blk{l}.att.bnq", eps),
            bn_k=_bn_from(tensors, f"blk{l}.att.bnk", eps),
            bn_v=_bn_from(tensors, f"blk{l}.att.bnv", eps),
            bn_o=_bn_from(tensors, f"blk{l}.att.bno", eps),
        )
        mlp = MlpParams(
            w1=tensors[f"blk{l}.mlp.w1"], b1=tensors[f"blk{l}.mlp.b1"],
            w2=tensors[f"blk{l}.mlp.w2"], b2=tensors[f"blk{l}.mlp.b2"],
            bn1=_bn_from(tensors, f"blk{l}.mlp.bn1", eps),
            bn2=_bn_from(tensors, f"blk{l}.mlp.bn2", eps),
        )
        blocks.append(Block(f"blk{l}", attn, mlp))
    head = Head(tensors["head.weight"], tensors["head.bias"])
    return TransformerModel(cfg, tokenizer, blocks, head, sites)


def _load_snn(manifest: dict, tensors: dict[str, np.ndarray]) -> SpikingModel:
    cfg = _load_config(manifest)
    _take(tensors, _snn_tensor_plan(cfg))
    t_win = manifest.get("time_window")
    if t_win != cfg.quant_levels:
        raise ManifestError(f"time window {t_win!r} != quant levels {cfg.quant_levels}")
    thresholds = manifest.get("thresholds")
    if not isinstance(thresholds, dict):
        raise ManifestError("spiking container has no threshold table")

    def neuron(name: str) -> NeuronSite:
        if name not in thresholds:
            raise IncompleteModelError(f"threshold table is missing site {name}")
        e = thresholds[name]
        try:
            site = NeuronSite(name, e["kind"], float(e["step"]), int(e["levels"]),
                              float(e["theta"]), float(e["theta_fire"]),
                              [(str(n), float(th)) for n, th in e.get("presyn", [])])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad threshold entry for {name}: {exc}") from exc
        if site.kind not in NEURON_KINDS:
            raise ManifestError(f"unknown site kind {site.kind!r} at {name}")
        if not (site.theta_fire > 0.0):
            raise ManifestError(f"site {name} has non-positive threshold")
        return site

    tokenizer = []
    for i, st in enumerate(cfg.conv_stages, start=1):
        spec = ConvSpec(tensors[f"tok{i}.conv.weight"], tensors[f"tok{i}.conv.bias"],
                        (st.stride, st.stride), (st.padding, st.padding))
        pool = st.pool if st.maxpool else None
        pool_site = neuron(f"tok{i}.pool") if pool else None
        tokenizer.append(SpikingStage(spec, neuron(f"tok{i}"), pool, pool_site))
    blocks = []
    for l in range(1, cfg.blocks + 1):
        attn = SpikingAttention(
            tensors[f"blk{l}.att.wq"], tensors[f"blk{l}.att.bq"],
            tensors[f"blk{l}.att.wk"], tensors[f"blk{l}.att.bk"],
            tensors[f"blk{l}.att.wv"], tensors[f"blk{l}.att.bv"],
            tensors[f"blk{l}.att.wo"], tensors[f"blk{l}.att.bo"],
            neuron(f"blk{l}.att.in"), neuron(f"blk{l}.att.q"), neuron(f"blk{l}.att.k"),
            neuron(f"blk{l}.att.v"), neuron(f"blk{l}.att.score"), neuron(f"blk{l}.att.out"),
        )
        mlp = SpikingMlp(
            tensors[f"blk{l}.mlp.w1"], tensors[f"blk{l}.mlp.b1"],
            tensors[f"blk{l}.mlp.w2"], tensors[f"blk{l}.mlp.b2"],
            neuron(f"blk{l}.mlp.in"), neuron(f"blk{l}.mlp.mid"),
        )
        blocks.append(SpikingBlock(f"blk{l}", attn, mlp))
    head = Head(tensors["head.weight"], tensors["head.bias"])
    tdec = [TdecSite(str(t["name"]), str(t["kind"]))
            for t in manifest.get("tdec_sites", [])]
    return SpikingModel(cfg, tokenizer, blocks, head, int(t_win), tdec)


def load(path) -> TransformerModel | SpikingModel:
    """Read a container directory; the manifest's kind picks the model type."""
    manifest, tensors = read_tensors(path)
    if manifest["kind"] == "ann":
        return _load_ann(manifest, tensors)
    return _load_snn(manifest, tensors)


def write_raw_image(path, image: np.ndarray) -> None:
    """Planar [C,H,W] float32 file with an ASCII "C H W" header line."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"image must be [C,H,W], got shape {image.shape}")
    c, h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"{c} {h} {w}\n".encode("ascii"))
        f.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_raw_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline()
        try:
            c, h, w = (int(v) for v in header.split())
        except ValueError as e:
            raise ManifestError(f"bad image header {header!r}") from e
        payload = f.read()
    count = c * h * w
    if len(payload) != 4 * count:
        raise BlobError(f"image payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4", count=count).reshape(c, h, w).astype(np.float64)
