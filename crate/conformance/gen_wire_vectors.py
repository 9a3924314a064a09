#!/usr/bin/env python3
"""Writes wire-vectors.json: golden envelope byte sequences built with the
Python standard library only, independent of the Rust encoder.

Run from this directory: python3 gen_wire_vectors.py
"""

import json
import struct
import zlib
from pathlib import Path

MAGIC = b"ARCD"
VERSION = 1
TYPES = {
    "INIT": 0x01,
    "FRAME": 0x02,
    "ACK": 0x03,
    "COMPOSITE": 0x04,
    "CONTROL": 0x05,
    "POINTCLOUD": 0x06,
    "ERROR": 0x07,
    "END": 0x08,
}


def header_bytes(header):
    # compact, sorted keys, raw UTF-8
    return json.dumps(header, separators=(",", ":"), sort_keys=True, ensure_ascii=False).encode("utf-8")


def envelope(msg_type, header, payloads=()):
    h = header_bytes(header)
    out = bytearray(MAGIC)
    out += bytes([VERSION, TYPES[msg_type]])
    out += struct.pack("<I", len(h))
    out += h
    out += bytes([len(payloads)])
    for p in payloads:
        out += struct.pack("<I", len(p))
        out += p
    return bytes(out)


def png_rgb(width, height, pixels):
    """8-bit RGB PNG, filter type 0 on every row."""

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    raw = bytearray()
    for y in range(height):
        raw.append(0)
        for x in range(width):
            raw += bytes(pixels[y * width + x])
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(bytes(raw))) + chunk(b"IEND", b"")


def depth_le(values):
    return b"".join(struct.pack("<H", v) for v in values)


def pcd(points, colors):
    n = len(points)
    head = (
        "VERSION 0.7\nFIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n"
        f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA binary\n"
    ).encode()
    body = bytearray()
    for (x, y, z), (r, g, b) in zip(points, colors):
        body += struct.pack("<fff", x, y, z)
        body += struct.pack("<I", (r << 16) | (g << 8) | b)
    return head + bytes(body)


IDENTITY = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
SHIFTED = [1.0, 0.0, 0.0, 0.25, 0.0, 1.0, 0.0, -0.5, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0]

MANIFEST = {
    "session_id": "golden-1",
    "intrinsics": {"fx": 2.0, "fy": 2.0, "cx": 1.0, "cy": 1.0, "width": 2, "height": 2},
    "target_resolution": [2, 2],
    "depth_resolution": [2, 2],
    "objects": [
        {
            "object_id": "cube",
            "mesh_ref": "cube",
            "pose": SHIFTED,
            "scale": 0.2,
            "base_color": [0.85, 0.3, 0.2],
        }
    ],
    "created_at": "2024-01-01T00:00:00Z",
}

RGB = [(255, 0, 0), (0, 255, 0), (0, 0, 255), (12, 34, 56)]
DEPTH = [1000, 0, 1500, 65535]
POINTS = [(0.0, 0.0, -1.0), (0.5, -0.25, -2.0), (-1.5, 2.0, -0.75)]
COLORS = [(255, 255, 255), (1, 2, 3), (200, 100, 0)]


def valid_vectors():
    v = []

    def add(name, msg_type, header, payloads=(), typed=None):
        entry = {
            "name": name,
            "hex": envelope(msg_type, header, payloads).hex(),
            "expect": {
                "msg_type": msg_type,
                "header": header,
                "payloads_hex": [p.hex() for p in payloads],
            },
        }
        if typed is not None:
            entry["typed"] = typed
        v.append(entry)

    add("init_manifest", "INIT", MANIFEST, typed={"kind": "init"})
    add(
        "frame_2x2",
        "FRAME",
        {"index": 7, "timestamp_ns": 1000000000, "pose": SHIFTED},
        [png_rgb(2, 2, RGB), depth_le(DEPTH)],
        typed={"kind": "frame", "rgb": [c for px in RGB for c in px], "depth_mm": DEPTH},
    )
    add("ack_frame", "ACK", {"session_id": "golden-1", "frame_index": 7})
    add(
        "composite_png",
        "COMPOSITE",
        {"session_id": "golden-1", "frame_index": 7, "model_id": "sensor", "task": "occlusion_plane"},
        [png_rgb(2, 2, RGB)],
    )
    add(
        "control_set_plane_depth",
        "CONTROL",
        {"command": "set_plane_depth", "session_id": "golden-1", "depth_m": 0.95},
        typed={"kind": "control"},
    )
    add(
        "control_set_object_pose",
        "CONTROL",
        {"command": "set_object_pose", "session_id": "golden-1", "object_id": "cube", "pose": IDENTITY, "scale": 1.5},
        typed={"kind": "control"},
    )
    add(
        "control_select_models",
        "CONTROL",
        {"command": "select_models", "session_id": "golden-1", "model_ids": ["sensor", "scale2"]},
        typed={"kind": "control"},
    )
    add(
        "control_replay_seek",
        "CONTROL",
        {"command": "replay_seek", "session_id": "golden-1", "frame_index": 19},
        typed={"kind": "control"},
    )
    add(
        "control_replay_mode",
        "CONTROL",
        {"command": "replay_mode", "session_id": "golden-1", "mode": "frame_by_frame", "fps": 30.0},
        typed={"kind": "control"},
    )
    add(
        "pointcloud_three_points",
        "POINTCLOUD",
        {"session_id": "golden-1", "frame_index": 7, "model_id": "sensor", "task": "point_cloud", "point_count": 3},
        [pcd(POINTS, COLORS)],
        typed={"kind": "pointcloud", "points": [list(p) for p in POINTS], "colors": [list(c) for c in COLORS]},
    )
    add("error_no_session", "ERROR", {"code": "NoSuchSession", "message": "session \"x\" does not exist"})
    add("end_empty", "END", {})
    add("unicode_header", "ACK", {"note": "ñ → ✓", "n": -3})
    add("empty_and_large_payloads", "COMPOSITE", {"k": [1, 2.5, None, True]}, [b"", bytes(range(256)) * 4])
    return v


def error_vectors():
    good = envelope("ACK", {"a": 1}, [b"xyz"])
    bad_len = bytearray(good)
    struct.pack_into("<I", bad_len, 6, 200)
    return [
        {"name": "bad_magic", "hex": (b"ARCX" + good[4:]).hex(), "error": "BadMagic"},
        {"name": "unsupported_version", "hex": (good[:4] + b"\x02" + good[5:]).hex(), "error": "UnsupportedVersion"},
        {"name": "unknown_type", "hex": (good[:5] + b"\x09" + good[6:]).hex(), "error": "UnknownMessageType"},
        {"name": "truncated_payload", "hex": good[:-1].hex(), "error": "Truncated"},
        {"name": "header_len_overrun", "hex": bytes(bad_len).hex(), "error": "Truncated"},
        {"name": "trailing_bytes", "hex": (good + b"\x00").hex(), "error": "TrailingBytes"},
        {"name": "header_not_json", "hex": envelope_raw_header(b"{nope"), "error": "MalformedHeader"},
        {"name": "empty_input", "hex": "", "error": "Truncated"},
    ]


def envelope_raw_header(h):
    out = bytearray(MAGIC) + bytes([VERSION, TYPES["ACK"]]) + struct.pack("<I", len(h)) + h + b"\x00"
    return bytes(out).hex()


def main():
    doc = {
        "format": "ARCD envelope v1",
        "layout": "magic[4] version[u8] msg_type[u8] header_len[u32 LE] header[JSON] payload_count[u8] (len[u32 LE] bytes)*",
        "vectors": valid_vectors(),
        "errors": error_vectors(),
    }
    out = Path(__file__).with_name("wire-vectors.json")
    out.write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    end = next(v for v in doc["vectors"] if v["name"] == "end_empty")
    assert len(bytes.fromhex(end["hex"])) == 13
    print(f"wrote {len(doc['vectors'])} vectors and {len(doc['errors'])} error cases to {out}")


if __name__ == "__main__":
    main()
