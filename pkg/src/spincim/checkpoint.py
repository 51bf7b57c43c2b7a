"""NSPN checkpoint container.

Layout (all integers little-endian):

    magic    4 bytes  b"NSPN"
    version  1 byte   (currently 1)
    then a sequence of sections until end of file:
        tag      4 ASCII bytes
        length   u64, payload byte count
        payload

Sections:
    CONF  UTF-8 INI text of the run configuration (architecture echo)
    SEED  u64 run seed
    PARM  one per parameter: u16 name length, name, u8 role, u8 binary flag,
          u8 ndim, ndim x u32 dims, float64 data (row-major)
    NORM  one per normalization layer: u32 layer, u32 C, C float64 running
          mean, C float64 running variance
    BANK  one per bank: u32 layer, u32 M, u32 C, u32 L, f64 lo, f64 hi,
          u8 index width (1 or 2), M*C indices
Unknown tags are skipped, so readers stay compatible with added sections.
"""

import struct

import numpy as np

from .config import parse_config
from .errors import ParseError
from .model import BayesNet
from .tensor import ROLES
from .vi import CrossbarBank

MAGIC = b"NSPN"
VERSION = 1


def _section(tag, payload):
    return tag + struct.pack("<Q", len(payload)) + payload


def _param_payload(name, p):
    raw = name.encode("utf-8")
    data = np.ascontiguousarray(p.value.data, dtype="<f8")
    head = struct.pack("<H", len(raw)) + raw
    head += struct.pack("<BBB", ROLES.index(p.role), int(bool(p.binary)), data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def dumps(net, config, seed):
    out = [MAGIC, bytes([VERSION])]
    out.append(_section(b"CONF", config.to_ini().encode("utf-8")))
    out.append(_section(b"SEED", struct.pack("<Q", int(seed))))
    for name in sorted(net.params):
        out.append(_section(b"PARM", _param_payload(name, net.params[name])))
    for i in sorted(net.norms):
        st = net.norms[i]
        c = len(st.running_mean)
        out.append(_section(b"NORM", struct.pack("<II", i, c) + np.asarray(st.running_mean, "<f8").tobytes()
                            + np.asarray(st.running_var, "<f8").tobytes()))
    for i in sorted(net.banks):
        bank = net.banks[i]
        width = 1 if bank.L <= 255 else 2
        idx = np.ascontiguousarray(bank.levels, dtype="<u1" if width == 1 else "<u2")
        lo, hi = bank.value_range
        out.append(_section(b"BANK", struct.pack("<IIIIddB", i, bank.M, idx.shape[1], bank.L, lo, hi, width)
                            + idx.tobytes()))
    return b"".join(out)


def save(path, net, config, seed):
    with open(path, "wb") as fh:
        fh.write(dumps(net, config, seed))


class _Reader:
    def __init__(self, buf, base):
        self.buf, self.pos, self.base = buf, 0, base

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise ParseError(f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                             offset=self.base + self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_sections(buf):
    buf = bytes(buf)
    if len(buf) < 5:
        raise ParseError("file shorter than the NSPN header", offset=len(buf))
    if buf[:4] != MAGIC:
        raise ParseError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    if buf[4] != VERSION:
        raise ParseError(f"unsupported NSPN version {buf[4]}", offset=4)
    pos, sections = 5, []
    while pos < len(buf):
        if pos + 12 > len(buf):
            raise ParseError("truncated section header", offset=pos)
        tag = buf[pos:pos + 4]
        (length,) = struct.unpack("<Q", buf[pos + 4:pos + 12])
        start = pos + 12
        if start + length > len(buf):
            raise ParseError(f"section {tag!r} declares {length} bytes, {len(buf) - start} available", offset=pos + 4)
        sections.append((tag, buf[start:start + length], start))
        pos = start + length
    return sections


def loads(buf):
    """Rebuild (net, config, seed) from checkpoint bytes."""
    sections = read_sections(buf)
    conf = [s for s in sections if s[0] == b"CONF"]
    if len(conf) != 1:
        raise ParseError("checkpoint needs exactly one CONF section", offset=5)
    seed_sec = [s for s in sections if s[0] == b"SEED"]
    seed = struct.unpack("<Q", seed_sec[0][1])[0] if seed_sec else 0
    config = parse_config(conf[0][1].decode("utf-8"), seed)
    net = BayesNet(config.model_spec(), config.method_params(), seed=seed)
    seen = set()
    for tag, payload, base in sections:
        r = _Reader(payload, base)
        if tag == b"PARM":
            (nlen,) = r.unpack("<H", "parameter name length")
            name = r.take(nlen, "parameter name").decode("utf-8")
            role, binary, ndim = r.unpack("<BBB", "parameter header")
            dims = r.unpack(f"<{ndim}I", "parameter dims")
            count = int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(r.take(8 * count, f"parameter {name}"), dtype="<f8").reshape(dims)
            if name not in net.params:
                raise ParseError(f"parameter {name} does not exist in the configured model", offset=base)
            p = net.params[name]
            if p.value.data.shape != tuple(dims) or ROLES[role] != p.role:
                raise ParseError(f"parameter {name} has shape {dims} / role {ROLES[role]}, model expects "
                                 f"{p.value.data.shape} / {p.role}", offset=base)
            p.value.data[...] = data
            seen.add(name)
        elif tag == b"NORM":
            i, c = r.unpack("<II", "norm header")
            mean = np.frombuffer(r.take(8 * c, "running mean"), "<f8").astype(np.float64)
            var = np.frombuffer(r.take(8 * c, "running variance"), "<f8").astype(np.float64)
            if i not in net.norms:
                raise ParseError(f"layer {i} has no normalization", offset=base)
            net.norms[i].running_mean = mean
            net.norms[i].running_var = var
        elif tag == b"BANK":
            i, m, c, L, lo, hi, width = r.unpack("<IIIIddB", "bank header")
            dt = "<u1" if width == 1 else "<u2"
            idx = np.frombuffer(r.take(m * c * width, "bank indices"), dt).reshape(m, c)
            net.banks[i] = CrossbarBank(idx.astype(np.uint8 if width == 1 else np.uint16), L, (lo, hi))
    missing = set(net.params) - seen
    if missing:
        raise ParseError(f"checkpoint lacks parameters {sorted(missing)}", offset=len(buf))
    return net, config, seed


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
