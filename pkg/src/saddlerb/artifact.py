"""Offline artifact: a directory with ``manifest.json`` and binary payloads.

Layout::

    <artifact>/
        manifest.json          versioned metadata, payload shapes and sha256 sums
        <name>.bin             little-endian float64, row-major, shape in manifest

Integer arrays are stored as float64 and converted back on load (all
values are far below 2**53).  Directories are written to a temporary
sibling and renamed into place, so a failed write never leaves a partial
artifact behind.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affine import ParameterDomain
from .constants import ConstantsTraining
from .errors import ArtifactError
from .online import ReducedModel
from .rbspace import RBSpace

FORMAT = "saddlerb-artifact"
VERSION = 1

_MODEL_ARRAYS = ("Aq", "Bq", "fq", "gq", "C1", "C2", "G1", "G2")
_MODEL_INTS = ("nx", "ny", "m1", "k1", "m2", "k2", "order1", "order2")


@dataclass
class VariantData:
    variant: int
    space: RBSpace
    model: ReducedModel
    trace: list = field(default_factory=list)      # per-iteration dicts (no timings)
    converged: bool = False
    final_max: float = float("nan")


@dataclass
class Artifact:
    config: dict
    mesh_hash: str
    n_truth: int
    variants: dict                       # variant number -> VariantData
    training: ConstantsTraining | None = None
    meta: dict = field(default_factory=dict)


def _write_array(root: Path, name: str, arr) -> dict:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    data = a.tobytes(order="C")
    fname = name.replace("/", "__") + ".bin"
    (root / fname).write_bytes(data)
    return {"file": fname, "shape": list(a.shape), "sha256": hashlib.sha256(data).hexdigest()}


def _read_array(root: Path, entry: dict, verify: bool = True) -> np.ndarray:
    path = root / entry["file"]
    if not path.exists():
        raise ArtifactError(f"missing payload {entry['file']}")
    data = path.read_bytes()
    if verify and hashlib.sha256(data).hexdigest() != entry["sha256"]:
        raise ArtifactError(f"checksum mismatch for {entry['file']}")
    shape = tuple(entry["shape"])
    a = np.frombuffer(data, dtype="<f8")
    if a.size != int(np.prod(shape)):
        raise ArtifactError(f"payload {entry['file']} has wrong size")
    return a.reshape(shape).astype(float)


def save_artifact(art: Artifact, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-artifact-", dir=path.parent))
    try:
        payloads = {}
        variants = {}
        for k in sorted(art.variants):
            vd = art.variants[k]
            pre = f"v{k}"
            m, s = vd.model, vd.space
            payloads[f"{pre}/Zu"] = _write_array(tmp, f"{pre}/Zu", s.Zu)
            payloads[f"{pre}/Zp"] = _write_array(tmp, f"{pre}/Zp", s.Zp)
            payloads[f"{pre}/mus"] = _write_array(tmp, f"{pre}/mus", np.array(s.mus).reshape(len(s.mus), -1))
            for name in _MODEL_ARRAYS + _MODEL_INTS:
                payloads[f"{pre}/{name}"] = _write_array(tmp, f"{pre}/{name}", getattr(m, name))
            variants[str(k)] = {
                "u_roles": s.u_roles, "p_roles": s.p_roles,
                "u_gen": [int(g) for g in s.u_gen], "p_gen": [int(g) for g in s.p_gen],
                "thetas": m.thetas, "trace": vd.trace, "converged": bool(vd.converged),
                "final_max": float(vd.final_max),
            }
        training = None
        if art.training is not None:
            meta, arrays = art.training.to_payload()
            for name, arr in arrays.items():
                payloads[f"constants/{name}"] = _write_array(tmp, f"constants/{name}", arr)
            training = meta
        manifest = {
            "format": FORMAT, "version": VERSION, "config": art.config,
            "mesh_hash": art.mesh_hash, "n_truth": int(art.n_truth),
            "variants": variants, "constants": training, "meta": art.meta,
            "payloads": payloads,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                           encoding="utf-8")
        if path.exists():
            old = path.with_name(path.name + ".old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_manifest(path) -> dict:
    mpath = Path(path) / "manifest.json"
    if not mpath.exists():
        raise ArtifactError(f"no artifact at {path}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise ArtifactError("not a saddlerb artifact")
    if manifest.get("version") != VERSION:
        raise ArtifactError(f"unsupported artifact version {manifest.get('version')}")
    return manifest


def load_artifact(path, verify: bool = True) -> Artifact:
    root = Path(path)
    manifest = load_manifest(root)
    pl = manifest["payloads"]

    def arr(name):
        if name not in pl:
            raise ArtifactError(f"payload {name} not listed in manifest")
        return _read_array(root, pl[name], verify)

    domain_cfg = manifest["config"]["benchmark"]
    domain = ParameterDomain(tuple(domain_cfg["lower"]), tuple(domain_cfg["upper"]))
    variants = {}
    for key, vmeta in manifest["variants"].items():
        pre = f"v{key}"
        space = RBSpace(arr(f"{pre}/Zu"), arr(f"{pre}/Zp"), list(vmeta["u_roles"]),
                        list(vmeta["p_roles"]), list(vmeta["u_gen"]), list(vmeta["p_gen"]),
                        [m for m in arr(f"{pre}/mus")])
        kw = {name: arr(f"{pre}/{name}") for name in _MODEL_ARRAYS}
        kw.update({name: arr(f"{pre}/{name}").astype(np.int64) for name in _MODEL_INTS})
        model = ReducedModel(domain=domain, thetas=vmeta["thetas"], mesh_hash=manifest["mesh_hash"], **kw)
        variants[int(key)] = VariantData(int(key), space, model, vmeta["trace"],
                                         vmeta["converged"], vmeta["final_max"])
    training = None
    if manifest.get("constants"):
        names = [k.split("/", 1)[1] for k in pl if k.startswith("constants/")]
        training = ConstantsTraining.from_payload(manifest["constants"],
                                                  {n: arr(f"constants/{n}") for n in names})
    return Artifact(manifest["config"], manifest["mesh_hash"], manifest["n_truth"], variants,
                    training, manifest.get("meta", {}))


def payload_checksums(path) -> dict:
    return {k: v["sha256"] for k, v in load_manifest(path)["payloads"].items()}
