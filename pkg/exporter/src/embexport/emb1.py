"""EMB1 binary writer.

Layout (little-endian): magic "EMB1", u16 version (1), u8 tag length,
ASCII layer tag, u32 dim, u32 count, then per record: u16 id length,
UTF-8 sample id, u8 domain code (0 = id, 1 = selfie), dim float32
values. One layer per file.
"""

import struct

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
DOMAIN_CODES = {"id": 0, "selfie": 1}


class Emb1Error(ValueError):
    pass


def write_emb1(path, layer_tag, records):
    records = list(records)
    if not records:
        raise Emb1Error("no records to write")
    dim = len(records[0][2])
    tag_bytes = layer_tag.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<B", len(tag_bytes)))
        fh.write(tag_bytes)
        fh.write(struct.pack("<II", dim, len(records)))
        for sample_id, domain_tag, vec in records:
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (dim,):
                raise Emb1Error(f"record {sample_id!r} has dim {vec.shape} != {dim}")
            sid = sample_id.encode("utf-8")
            fh.write(struct.pack("<H", len(sid)))
            fh.write(sid)
            fh.write(struct.pack("<B", DOMAIN_CODES[domain_tag]))
            fh.write(vec.tobytes())
