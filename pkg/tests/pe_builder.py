"""Minimal byte-level PE writer for test fixtures.

Builds structurally valid PE32 / PE32+ images with a configurable import
table, extra sections, and payload bytes. Layout is deliberately simple:
one header region followed by file-aligned sections.
"""
from __future__ import annotations

import struct

FILE_ALIGN = 0x200
SECT_ALIGN = 0x1000

MACHINE_X86 = 0x14C
MACHINE_X86_64 = 0x8664


def _align(v: int, a: int) -> int:
    return (v + a - 1) // a * a


def build_pe(imports: list[tuple[str, list]] | None = None,
             pe32_plus: bool = False,
             extra_sections: list[tuple[str, bytes]] | None = None,
             entry_point: int = 0x1000,
             text_payload: bytes = b"\x90" * 64) -> bytes:
    """Return raw PE bytes.

    imports: list of (library, functions); a function is a str name or an
    int ordinal. extra_sections: list of (name, raw payload bytes).
    """
    imports = imports or []
    extra_sections = extra_sections or []

    sections: list[dict] = []  # name, vaddr, vsize, raw (bytes), rptr filled later
    vaddr = SECT_ALIGN

    sections.append({"name": ".text", "vaddr": vaddr, "raw": text_payload})
    vaddr += _align(max(len(text_payload), 1), SECT_ALIGN)

    import_rva = import_size = 0
    if imports:
        idata_vaddr = vaddr
        idata = _build_idata(imports, idata_vaddr, pe32_plus)
        import_rva = idata_vaddr
        import_size = (len(imports) + 1) * 20
        sections.append({"name": ".idata", "vaddr": idata_vaddr, "raw": idata})
        vaddr += _align(len(idata), SECT_ALIGN)

    for name, payload in extra_sections:
        sections.append({"name": name, "vaddr": vaddr, "raw": payload})
        vaddr += _align(max(len(payload), 1), SECT_ALIGN)

    num_sections = len(sections)
    opt_size = 240 if pe32_plus else 224
    headers_size = 0x40 + 4 + 20 + opt_size + num_sections * 40
    raw_ptr = _align(headers_size, FILE_ALIGN)
    for s in sections:
        s["rptr"] = raw_ptr
        s["rsize"] = _align(len(s["raw"]), FILE_ALIGN)
        raw_ptr += s["rsize"]

    dos = bytearray(0x40)
    dos[0:2] = b"MZ"
    struct.pack_into("<I", dos, 0x3C, 0x40)

    machine = MACHINE_X86_64 if pe32_plus else MACHINE_X86
    coff = struct.pack("<HHIIIHH", machine, num_sections, 0, 0, 0, opt_size, 0x0102)

    magic = 0x20B if pe32_plus else 0x10B
    opt = bytearray(opt_size)
    struct.pack_into("<H", opt, 0, magic)
    opt[2] = 14  # linker major, cosmetic
    struct.pack_into("<I", opt, 16, entry_point)
    if pe32_plus:
        struct.pack_into("<Q", opt, 24, 0x140000000)       # image base
        struct.pack_into("<I", opt, 32, SECT_ALIGN)
        struct.pack_into("<I", opt, 36, FILE_ALIGN)
        struct.pack_into("<I", opt, 108, 16)               # NumberOfRvaAndSizes
        struct.pack_into("<II", opt, 112 + 8, import_rva, import_size)
    else:
        struct.pack_into("<I", opt, 28, 0x400000)
        struct.pack_into("<I", opt, 32, SECT_ALIGN)
        struct.pack_into("<I", opt, 36, FILE_ALIGN)
        struct.pack_into("<I", opt, 92, 16)
        struct.pack_into("<II", opt, 96 + 8, import_rva, import_size)

    sect_hdrs = b""
    for s in sections:
        name8 = s["name"].encode("ascii")[:8].ljust(8, b"\0")
        sect_hdrs += name8 + struct.pack(
            "<IIIIIIHHI",
            len(s["raw"]),      # VirtualSize
            s["vaddr"],
            s["rsize"],
            s["rptr"],
            0, 0, 0, 0,
            0x60000020,
        )

    img = bytearray(dos) + b"PE\0\0" + coff + bytes(opt) + sect_hdrs
    img += b"\0" * (sections[0]["rptr"] - len(img))
    for s in sections:
        img += s["raw"].ljust(s["rsize"], b"\0")
    return bytes(img)


def _build_idata(imports: list[tuple[str, list]], base_rva: int,
                 pe32_plus: bool) -> bytes:
    """Lay out descriptors, thunk arrays, hint/name entries, dll names."""
    width = 8 if pe32_plus else 4
    ordinal_flag = 1 << (width * 8 - 1)
    n = len(imports)

    desc_size = (n + 1) * 20
    thunk_sizes = [(len(funcs) + 1) * width for _, funcs in imports]
    thunks_off = desc_size
    names_off = thunks_off + 2 * sum(thunk_sizes)  # OFT and FT copies

    blob = bytearray(names_off)
    name_rvas: list[int] = []
    hint_rvas: list[list[int | None]] = []
    for lib, funcs in imports:
        per_func = []
        for f in funcs:
            if isinstance(f, int):
                per_func.append(None)
            else:
                per_func.append(base_rva + len(blob))
                blob += struct.pack("<H", 0) + f.encode("ascii") + b"\0"
                if len(blob) % 2:
                    blob += b"\0"
        hint_rvas.append(per_func)
        name_rvas.append(base_rva + len(blob))
        blob += lib.encode("ascii") + b"\0"

    pos = thunks_off
    fmt = "<Q" if pe32_plus else "<I"
    for i, (lib, funcs) in enumerate(imports):
        oft_rva = base_rva + pos
        for f, hint_rva in zip(funcs, hint_rvas[i]):
            value = ordinal_flag | (f & 0xFFFF) if isinstance(f, int) else hint_rva
            struct.pack_into(fmt, blob, pos, value)
            pos += width
        pos += width  # NUL terminator already zero

        ft_rva = base_rva + pos
        for f, hint_rva in zip(funcs, hint_rvas[i]):
            value = ordinal_flag | (f & 0xFFFF) if isinstance(f, int) else hint_rva
            struct.pack_into(fmt, blob, pos, value)
            pos += width
        pos += width

        struct.pack_into("<IIIII", blob, i * 20, oft_rva, 0, 0, name_rvas[i], ft_rva)

    return bytes(blob)
