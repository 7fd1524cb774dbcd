"""Named network weights and their binary file format.

Layout (all integers little-endian)::

    8 bytes   magic b"LDPARAMS"
    uint32    format version (1)
    uint32    length of UTF-8 JSON metadata, then the JSON
              ({"networks": {name: {"kind": ..., "config": {...}}}})
    uint32    tensor count
    per tensor:
        uint16 name length, UTF-8 name ("<network>.<parameter>")
        uint8  ndim, then ndim x uint32 dims
        float32 little-endian values, C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ValidationError
from .nets import NetConfig, TintNet, build_net

MAGIC = b"LDPARAMS"
VERSION = 1

NETWORK_NAMES = ("specshadow", "diffusion", "albedo_specshadow", "albedo_diffusion", "tint")


def _kind(name: str) -> str:
    return name.replace("albedo_", "")


@dataclass
class ModelParams:
    """Container for every trained network; absent networks are ``None``."""

    networks: dict = field(default_factory=dict)

    def __getitem__(self, name):
        try:
            return self.networks[name]
        except KeyError:
            raise ValidationError(f"parameters contain no {name!r} network") from None

    def get(self, name, default=None):
        return self.networks.get(name, default)

    def __contains__(self, name):
        return name in self.networks

    def named_tensors(self):
        out = []
        for net_name in NETWORK_NAMES:
            net = self.networks.get(net_name)
            if net is None:
                continue
            for pname, p in net.named_parameters():
                out.append((f"{net_name}.{pname}", p.detach()))
        return out

    def metadata(self) -> dict:
        meta = {}
        for name in NETWORK_NAMES:
            net = self.networks.get(name)
            if net is None:
                continue
            if isinstance(net, TintNet):
                cfg = {"in_channels": net.in_channels, "width": list(net.width)}
            else:
                cfg = net.config.to_dict()
            meta[name] = {"kind": _kind(name), "config": cfg}
        return {"networks": meta}


def save_params(path, params: ModelParams) -> None:
    meta = json.dumps(params.metadata(), sort_keys=True).encode()
    tensors = params.named_tensors()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            arr = t.cpu().numpy().astype("<f4")
            bname = name.encode()
            f.write(struct.pack("<H", len(bname)))
            f.write(bname)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValidationError(f"{path}: not a parameter file")
    version, mlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    pos = 16
    meta = json.loads(data[pos:pos + mlen])
    pos += mlen
    nets = {}
    for name, info in meta["networks"].items():
        if info["kind"] == "tint":
            net = TintNet(info["config"]["in_channels"], tuple(info["config"]["width"]))
        else:
            net = build_net(info["kind"], NetConfig.from_dict(info["config"]))
        nets[name] = net
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        state[name] = torch.from_numpy(arr.astype(np.float32))
    for net_name, net in nets.items():
        own = {k.split(".", 1)[1]: v for k, v in state.items() if k.split(".", 1)[0] == net_name}
        net.load_state_dict(own, strict=True)
        net.eval()
    return ModelParams(nets)
