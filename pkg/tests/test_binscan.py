"""Static triage tests: parser vs independent dumper, hash and entropy oracles."""
from __future__ import annotations

import hashlib
import math
import struct

import pytest
from hypothesis import given, settings, strategies as st

from binhound.binscan import (
    Architecture,
    FileType,
    ImportEntry,
    SizeClass,
    byte_entropy,
    compute_imphash,
    detect_file_type,
    extract_strings,
    parse_pe,
    size_class,
)
from binhound.errors import EmptyImports, EmptyInput, MalformedHeader

from .pe_builder import build_pe


# ---------------------------------------------------------------------------
# Independent import dumper. Clean-room second read of the same on-disk
# structures, kept deliberately separate from the production parser so the
# two can disagree.
# ---------------------------------------------------------------------------

def oracle_dump_imports(data: bytes) -> list[tuple[str, list[str]]]:
    pe_off = struct.unpack_from("<I", data, 0x3C)[0]
    num_sections, = struct.unpack_from("<H", data, pe_off + 6)
    opt_size, = struct.unpack_from("<H", data, pe_off + 20)
    opt_off = pe_off + 24
    magic, = struct.unpack_from("<H", data, opt_off)
    plus = magic == 0x20B
    dir_off = opt_off + (112 if plus else 96)
    import_rva, = struct.unpack_from("<I", data, dir_off + 8)

    sec_off = opt_off + opt_size
    secs = []
    for i in range(num_sections):
        vs, va, rs, rp = struct.unpack_from("<IIII", data, sec_off + i * 40 + 8)
        secs.append((va, max(vs, rs), rp, rs))

    def off(rva: int) -> int:
        for va, span, rp, rs in secs:
            if va <= rva < va + span and rva - va < rs:
                return rp + rva - va
        raise AssertionError(f"oracle: rva 0x{rva:x} unmapped")

    def cstr(at: int) -> str:
        end = data.index(b"\0", at)
        return data[at:end].decode("ascii")

    out = []
    d = off(import_rva)
    while True:
        oft, _, _, name_rva, ft = struct.unpack_from("<IIIII", data, d)
        if not (oft or name_rva or ft):
            break
        lib = cstr(off(name_rva))
        width, flag = (8, 1 << 63) if plus else (4, 1 << 31)
        fmt = "<Q" if plus else "<I"
        t = off(oft or ft)
        funcs = []
        while True:
            v, = struct.unpack_from(fmt, data, t)
            if v == 0:
                break
            funcs.append(f"ord{v & 0xFFFF}" if v & flag else cstr(off(v & 0x7FFFFFFF) + 2))
            t += width
        out.append((lib.lower(), funcs))
        d += 20
    return out


def entropy_by_hand(data: bytes) -> float:
    hist = [0] * 256
    for b in data:
        hist[b] += 1
    total = len(data)
    h = 0.0
    for c in hist:
        if c:
            p = c / total
            h -= p * math.log(p, 2)
    return h


# ---------------------------------------------------------------------------
# File-type detection
# ---------------------------------------------------------------------------

class TestDetectFileType:
    def test_pe(self):
        assert detect_file_type(build_pe()) is FileType.PE_EXECUTABLE

    def test_elf(self):
        assert detect_file_type(b"\x7fELF" + b"\0" * 12) is FileType.ELF

    def test_unknown(self):
        assert detect_file_type(b"#!/bin/sh\n") is FileType.UNKNOWN

    def test_empty(self):
        assert detect_file_type(b"") is FileType.UNKNOWN

    def test_one_byte(self):
        assert detect_file_type(b"M") is FileType.UNKNOWN

    @given(st.binary(max_size=64))
    def test_total(self, blob):
        assert detect_file_type(blob) in FileType


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------

class TestByteEntropy:
    def test_uniform_one_byte_value(self):
        assert byte_entropy(b"\x00" * 100) == 0.0

    def test_all_256_values(self):
        assert byte_entropy(bytes(range(256))) == pytest.approx(8.0, abs=1e-12)

    def test_two_values_balanced(self):
        assert byte_entropy(b"\x00\xff" * 32) == pytest.approx(1.0, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            byte_entropy(b"")

    @given(st.binary(min_size=1, max_size=2048))
    def test_matches_histogram_oracle(self, blob):
        assert byte_entropy(blob) == pytest.approx(entropy_by_hand(blob), abs=1e-9)

    @given(st.binary(min_size=1, max_size=2048))
    def test_bounds(self, blob):
        h = byte_entropy(blob)
        assert 0.0 <= h <= 8.0 + 1e-12


# ---------------------------------------------------------------------------
# Size classes
# ---------------------------------------------------------------------------

class TestSizeClass:
    @pytest.mark.parametrize("size,expected", [
        (0, SizeClass.SMALL),
        (51_200, SizeClass.SMALL),           # 50 KB
        (102_400, SizeClass.SMALL),          # boundary inclusive
        (102_401, SizeClass.MEDIUM),
        (409_600, SizeClass.MEDIUM),         # 400 KB
        (512_000, SizeClass.MEDIUM),
        (512_001, SizeClass.LARGE),
        (4_194_304, SizeClass.LARGE),        # 4 MB
        (5_242_880, SizeClass.LARGE),
        (5_242_881, SizeClass.OVERSIZE),
        (50_000_000, SizeClass.OVERSIZE),
    ])
    def test_boundaries(self, size, expected):
        assert size_class(size) is expected


# ---------------------------------------------------------------------------
# Imphash: verified directly against md5 of the normalized string
# ---------------------------------------------------------------------------

def md5_of(joined: str) -> str:
    return hashlib.md5(joined.encode()).hexdigest()


class TestImphash:
    def test_single_library(self):
        imp = [ImportEntry("kernel32.dll", ("CreateFileA", "ReadFile"))]
        assert compute_imphash(imp) == md5_of("kernel32.createfilea,kernel32.readfile")

    def test_extension_stripped_dll_sys_ocx(self):
        for ext in ("dll", "sys", "ocx"):
            imp = [ImportEntry(f"driver.{ext}", ("Entry",))]
            assert compute_imphash(imp) == md5_of("driver.entry")

    def test_other_extension_kept(self):
        imp = [ImportEntry("module.exe", ("Run",))]
        assert compute_imphash(imp) == md5_of("module.exe.run")

    def test_no_extension_kept(self):
        imp = [ImportEntry("ntdll", ("NtCreateFile",))]
        assert compute_imphash(imp) == md5_of("ntdll.ntcreatefile")

    def test_case_insensitive(self):
        a = [ImportEntry("KERNEL32.DLL", ("CreateFileA",))]
        b = [ImportEntry("kernel32.dll", ("createfilea",))]
        assert compute_imphash(a) == compute_imphash(b)

    def test_order_sensitive(self):
        a = [ImportEntry("k32.dll", ("A", "B"))]
        b = [ImportEntry("k32.dll", ("B", "A"))]
        assert compute_imphash(a) != compute_imphash(b)

    def test_library_permutation_changes_hash(self):
        a = [ImportEntry("a.dll", ("X",)), ImportEntry("b.dll", ("Y",))]
        b = [ImportEntry("b.dll", ("Y",)), ImportEntry("a.dll", ("X",))]
        assert compute_imphash(a) != compute_imphash(b)

    def test_ordinals_rendered_decimal(self):
        imp = [ImportEntry("ws2_32.dll", ("ord1", "ord23"))]
        assert compute_imphash(imp) == md5_of("ws2_32.ord1,ws2_32.ord23")

    def test_empty_raises(self):
        with pytest.raises(EmptyImports):
            compute_imphash([])

    @given(st.lists(
        st.tuples(
            st.text(alphabet="abcdefghij", min_size=1, max_size=8),
            st.lists(st.text(alphabet="ABCdef", min_size=1, max_size=8),
                     min_size=1, max_size=4),
        ),
        min_size=1, max_size=6,
    ))
    def test_matches_join_oracle(self, raw):
        imports = [ImportEntry(lib + ".dll", tuple(funcs)) for lib, funcs in raw]
        joined = ",".join(
            f"{lib.lower()}.{f.lower()}" for lib, funcs in raw for f in funcs
        )
        assert compute_imphash(imports) == md5_of(joined)


# ---------------------------------------------------------------------------
# PE parsing against the builder plus the independent dumper
# ---------------------------------------------------------------------------

IMPORT_CASES = [
    [("kernel32.dll", ["CreateFileA", "WriteFile", "CloseHandle"])],
    [("KERNEL32.DLL", ["VirtualAlloc"]), ("ws2_32.dll", ["socket", "connect", "send"])],
    [("ntdll.dll", ["NtQuerySystemInformation"]), ("advapi32.dll", ["RegOpenKeyExA", "RegSetValueExA"])],
    [("ws2_32.dll", [1, 23, 57])],                      # pure ordinal imports
    [("user32.dll", ["MessageBoxA", 2, "GetForegroundWindow"])],   # mixed
    [("a.dll", ["X"]), ("b.dll", ["Y"]), ("c.dll", ["Z"])],
    [("wininet.dll", ["InternetOpenA", "InternetConnectA", "HttpSendRequestA", "InternetReadFile"])],
    [("crypt32.dll", ["CryptEncrypt"]), ("kernel32.dll", ["GetTickCount"])],
    [("shell32.dll", ["ShellExecuteA"])],
    [("msvcrt.dll", ["malloc", "free", "memcpy", "printf", "exit"])],
]


class TestParsePe:
    @pytest.mark.parametrize("imports", IMPORT_CASES)
    @pytest.mark.parametrize("plus", [False, True])
    def test_imports_match_independent_dumper(self, imports, plus):
        data = build_pe(imports=imports, pe32_plus=plus)
        meta = parse_pe(data)
        got = [(e.library, list(e.functions)) for e in meta.imports]
        assert got == oracle_dump_imports(data)

    @pytest.mark.parametrize("imports", IMPORT_CASES)
    def test_imphash_stable_across_magnitude(self, imports):
        h32 = parse_pe(build_pe(imports=imports, pe32_plus=False)).imphash
        h64 = parse_pe(build_pe(imports=imports, pe32_plus=True)).imphash
        assert h32 == h64  # same logical import table

    def test_architecture(self):
        assert parse_pe(build_pe(pe32_plus=False)).architecture is Architecture.X86
        assert parse_pe(build_pe(pe32_plus=True)).architecture is Architecture.X86_64

    def test_entry_point(self):
        assert parse_pe(build_pe(entry_point=0x1234)).entry_point == 0x1234

    def test_sections_reported(self):
        data = build_pe(extra_sections=[(".rsrc", b"RES0" * 64)])
        names = [s.name for s in parse_pe(data).sections]
        assert names == [".text", ".rsrc"]

    def test_section_entropy_matches_padded_payload(self):
        payload = bytes(range(256)) * 2
        data = build_pe(extra_sections=[(".data", payload)])
        meta = parse_pe(data)
        sec = next(s for s in meta.sections if s.name == ".data")
        padded = payload.ljust(sec.raw_size, b"\0")
        assert sec.entropy == pytest.approx(entropy_by_hand(padded), abs=1e-9)

    def test_overall_entropy(self):
        data = build_pe()
        assert parse_pe(data).overall_entropy == pytest.approx(entropy_by_hand(data), abs=1e-9)

    def test_no_imports_imphash_none(self):
        meta = parse_pe(build_pe(imports=[]))
        assert meta.imports == ()
        assert meta.imphash is None

    def test_size_recorded(self):
        data = build_pe()
        assert parse_pe(data).size_bytes == len(data)

    def test_strings_from_sections(self):
        data = build_pe(extra_sections=[(".data", b"\0\0http://evil.example/payload\0\0")])
        assert "http://evil.example/payload" in parse_pe(data).strings

    def test_utf16_strings(self):
        wide = "cmd.exe /c whoami".encode("utf-16-le")
        data = build_pe(extra_sections=[(".data", b"\0" + wide + b"\0\0")])
        assert "cmd.exe /c whoami" in parse_pe(data).strings

    def test_to_dict_round_trips_through_json(self):
        import json
        meta = parse_pe(build_pe(imports=IMPORT_CASES[1]))
        blob = meta.to_json()
        d = json.loads(blob)
        assert d["architecture"] == "x86"
        assert d["imports"][0]["library"] == "kernel32.dll"
        assert d["size_bytes"] == meta.size_bytes


class TestParsePeRejectsMalformed:
    def test_not_mz(self):
        with pytest.raises(MalformedHeader):
            parse_pe(b"\x7fELF" + b"\0" * 100)

    def test_truncated_dos(self):
        with pytest.raises(MalformedHeader):
            parse_pe(b"MZ")

    def test_bad_pe_signature(self):
        data = bytearray(build_pe())
        data[0x40:0x44] = b"XX\0\0"
        with pytest.raises(MalformedHeader):
            parse_pe(bytes(data))

    def test_e_lfanew_past_end(self):
        data = bytearray(b"MZ" + b"\0" * 0x40)
        struct.pack_into("<I", data, 0x3C, 0x10000)
        with pytest.raises(MalformedHeader):
            parse_pe(bytes(data))

    def test_truncated_section_table(self):
        data = bytearray(build_pe())
        struct.pack_into("<H", data, 0x40 + 4 + 2, 40)  # claim 40 sections
        with pytest.raises(MalformedHeader):
            parse_pe(bytes(data))

    def test_section_raw_past_end(self):
        full = build_pe(extra_sections=[(".data", b"A" * 0x400)])
        with pytest.raises(MalformedHeader):
            parse_pe(full[:-0x200])

    def test_unknown_optional_magic(self):
        data = bytearray(build_pe())
        struct.pack_into("<H", data, 0x40 + 24, 0x999)
        with pytest.raises(MalformedHeader):
            parse_pe(bytes(data))

    @given(st.binary(max_size=512))
    @settings(max_examples=300)
    def test_never_crashes_on_garbage(self, blob):
        try:
            parse_pe(blob)
        except MalformedHeader:
            pass

    @given(st.data())
    @settings(max_examples=150)
    def test_never_crashes_on_mutated_valid_pe(self, data):
        base = bytearray(build_pe(imports=IMPORT_CASES[0]))
        n_flips = data.draw(st.integers(1, 8))
        for _ in range(n_flips):
            pos = data.draw(st.integers(0, len(base) - 1))
            base[pos] = data.draw(st.integers(0, 255))
        try:
            parse_pe(bytes(base))
        except MalformedHeader:
            pass


class TestExtractStrings:
    def test_ascii_run_minimum_five(self):
        assert extract_strings(b"\0abcd\0") == []
        assert extract_strings(b"\0abcde\0") == ["abcde"]

    def test_run_at_end_of_buffer(self):
        assert extract_strings(b"\0hello") == ["hello"]

    def test_non_printable_splits(self):
        assert extract_strings(b"alpha\x01beta") == ["alpha"]

    def test_utf16_run(self):
        assert extract_strings("registry".encode("utf-16-le")) == ["registry"]

    def test_utf16_too_short(self):
        assert extract_strings("hi".encode("utf-16-le")) == []
