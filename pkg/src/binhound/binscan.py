"""Deterministic static triage of binary samples.

Pure byte-level parsing: file-type detection from magic bytes, PE header and
import-table walking, import hashing, byte entropy, and size classification.
Nothing here ever executes or even interprets sample code.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path

from .errors import MalformedHeader, EmptyImports, EmptyInput

MZ_MAGIC = b"MZ"
ELF_MAGIC = b"\x7fELF"
PE_SIGNATURE = b"PE\0\0"

MACHINE_X86 = 0x14C
MACHINE_X86_64 = 0x8664

OPT_MAGIC_PE32 = 0x10B
OPT_MAGIC_PE32PLUS = 0x20B

IMPORT_DIRECTORY_INDEX = 1

KB = 1024
SMALL_MAX = 100 * KB
MEDIUM_MAX = 500 * KB
LARGE_MAX = 5 * KB * KB

MIN_STRING_RUN = 5

IMPHASH_STRIP_EXTS = ("dll", "sys", "ocx")


class FileType(Enum):
    PE_EXECUTABLE = "pe_executable"
    ELF = "elf"
    UNKNOWN = "unknown"


class Architecture(Enum):
    X86 = "x86"
    X86_64 = "x86_64"
    UNKNOWN = "unknown"


class SizeClass(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    OVERSIZE = "oversize"


@dataclass(frozen=True)
class Section:
    name: str
    raw_size: int
    entropy: float


@dataclass(frozen=True)
class ImportEntry:
    library: str                 # case-folded module name, extension kept
    functions: tuple             # symbol names or "ordN" tokens, table order


@dataclass(frozen=True)
class PeMetadata:
    size_bytes: int
    architecture: Architecture
    entry_point: int
    sections: tuple
    imports: tuple
    strings: tuple
    imphash: str | None
    overall_entropy: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        d["sections"] = [asdict(s) for s in self.sections]
        d["imports"] = [
            {"library": i.library, "functions": list(i.functions)} for i in self.imports
        ]
        d["strings"] = list(self.strings)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def detect_file_type(data: bytes) -> FileType:
    """Classify by leading magic bytes only. Total: never raises."""
    if data[:4] == ELF_MAGIC:
        return FileType.ELF
    if data[:2] == MZ_MAGIC:
        return FileType.PE_EXECUTABLE
    return FileType.UNKNOWN


def byte_entropy(data: bytes) -> float:
    """Shannon entropy of the byte histogram, base 2, in bits/byte."""
    if len(data) == 0:
        raise EmptyInput("entropy of empty buffer")
    counts = Counter(data)
    n = len(data)
    return -sum((c / n) * math.log2(c / n) for c in counts.values())


def size_class(size_bytes: int) -> SizeClass:
    """Bin into the collection size tiers; upper edges inclusive."""
    if size_bytes <= SMALL_MAX:
        return SizeClass.SMALL
    if size_bytes <= MEDIUM_MAX:
        return SizeClass.MEDIUM
    if size_bytes <= LARGE_MAX:
        return SizeClass.LARGE
    return SizeClass.OVERSIZE


def compute_imphash(imports: list[ImportEntry] | tuple) -> str:
    """MD5 over the normalized, comma-joined "library.function" sequence.

    Normalization: library lowercased with a trailing .dll/.sys/.ocx
    extension stripped, function lowercased, import-table order preserved.
    Ordinal imports are rendered as "ord" + decimal before hashing.
    """
    if not imports:
        raise EmptyImports("no import table")
    parts = []
    for entry in imports:
        lib = entry.library.lower()
        stem, dot, ext = lib.rpartition(".")
        if dot and ext in IMPHASH_STRIP_EXTS:
            lib = stem
        for func in entry.functions:
            parts.append(f"{lib}.{func.lower()}")
    return hashlib.md5(",".join(parts).encode("ascii", "replace")).hexdigest()


# ---------------------------------------------------------------------------
# PE parsing
# ---------------------------------------------------------------------------

def _read(data: bytes, offset: int, size: int, what: str) -> bytes:
    if offset < 0 or offset + size > len(data):
        raise MalformedHeader(f"{what} at 0x{offset:x}+{size} runs past end of file")
    return data[offset:offset + size]


def _u16(data: bytes, offset: int, what: str) -> int:
    return struct.unpack_from("<H", _read(data, offset, 2, what))[0]


def _u32(data: bytes, offset: int, what: str) -> int:
    return struct.unpack_from("<I", _read(data, offset, 4, what))[0]


def _u64(data: bytes, offset: int, what: str) -> int:
    return struct.unpack_from("<Q", _read(data, offset, 8, what))[0]


def _cstring(data: bytes, offset: int, what: str, limit: int = 512) -> str:
    end = data.find(b"\0", offset, offset + limit)
    if offset >= len(data) or end < 0:
        raise MalformedHeader(f"unterminated string for {what} at 0x{offset:x}")
    return data[offset:end].decode("ascii", "replace")


@dataclass
class _RawSection:
    name: str
    virtual_size: int
    virtual_address: int
    raw_size: int
    raw_pointer: int


def _rva_to_offset(sections: list[_RawSection], rva: int) -> int | None:
    for s in sections:
        span = max(s.virtual_size, s.raw_size)
        if s.virtual_address <= rva < s.virtual_address + span:
            delta = rva - s.virtual_address
            if delta < s.raw_size:
                return s.raw_pointer + delta
            return None  # lives in virtual-only tail
    return None


def extract_strings(data: bytes, min_run: int = MIN_STRING_RUN) -> list[str]:
    """Printable ASCII runs plus UTF-16LE runs of at least min_run chars."""
    out = []
    run_start = None
    for i, b in enumerate(data):
        if 0x20 <= b < 0x7F:
            if run_start is None:
                run_start = i
        else:
            if run_start is not None and i - run_start >= min_run:
                out.append(data[run_start:i].decode("ascii"))
            run_start = None
    if run_start is not None and len(data) - run_start >= min_run:
        out.append(data[run_start:].decode("ascii"))

    # UTF-16LE: printable ASCII byte followed by NUL, repeated
    i = 0
    n = len(data)
    while i + 1 < n:
        if 0x20 <= data[i] < 0x7F and data[i + 1] == 0:
            j = i
            while j + 1 < n and 0x20 <= data[j] < 0x7F and data[j + 1] == 0:
                j += 2
            if (j - i) // 2 >= min_run:
                out.append(data[i:j].decode("utf-16-le"))
            i = j + 2
        else:
            i += 1
    return out


def parse_pe(data: bytes) -> PeMetadata:
    """Parse headers, sections, imports, strings, and entropies.

    Read-only over the input buffer; truncated or internally inconsistent
    offsets raise MalformedHeader rather than reading out of bounds.
    """
    if detect_file_type(data) is not FileType.PE_EXECUTABLE:
        raise MalformedHeader("missing MZ magic")

    e_lfanew = _u32(data, 0x3C, "e_lfanew")
    if _read(data, e_lfanew, 4, "PE signature") != PE_SIGNATURE:
        raise MalformedHeader("missing PE signature")

    coff = e_lfanew + 4
    machine = _u16(data, coff + 0, "machine")
    num_sections = _u16(data, coff + 2, "section count")
    opt_size = _u16(data, coff + 16, "optional header size")
    opt = coff + 20

    if opt_size < 2:
        raise MalformedHeader("optional header too small")
    opt_magic = _u16(data, opt, "optional magic")
    if opt_magic == OPT_MAGIC_PE32:
        pe32_plus = False
        num_dirs_off, dirs_off = opt + 92, opt + 96
    elif opt_magic == OPT_MAGIC_PE32PLUS:
        pe32_plus = True
        num_dirs_off, dirs_off = opt + 108, opt + 112
    else:
        raise MalformedHeader(f"unknown optional-header magic 0x{opt_magic:x}")

    entry_point = _u32(data, opt + 16, "entry point")

    import_rva = import_size = 0
    if opt_size >= (num_dirs_off - opt) + 4:
        num_dirs = _u32(data, num_dirs_off, "directory count")
        if num_dirs > IMPORT_DIRECTORY_INDEX:
            base = dirs_off + IMPORT_DIRECTORY_INDEX * 8
            import_rva = _u32(data, base, "import directory rva")
            import_size = _u32(data, base + 4, "import directory size")

    sec_table = opt + opt_size
    raw_sections = []
    for i in range(num_sections):
        off = sec_table + i * 40
        hdr = _read(data, off, 40, f"section header {i}")
        name = hdr[:8].rstrip(b"\0").decode("ascii", "replace")
        vsize, vaddr, rsize, rptr = struct.unpack_from("<IIII", hdr, 8)
        if rptr + rsize > len(data):
            raise MalformedHeader(f"section {name!r} raw data past end of file")
        raw_sections.append(_RawSection(name, vsize, vaddr, rsize, rptr))

    imports = _parse_imports(data, raw_sections, import_rva, pe32_plus) if import_rva and import_size else []

    if machine == MACHINE_X86:
        arch = Architecture.X86
    elif machine == MACHINE_X86_64:
        arch = Architecture.X86_64
    else:
        arch = Architecture.UNKNOWN

    sections = tuple(
        Section(
            name=s.name,
            raw_size=s.raw_size,
            entropy=byte_entropy(data[s.raw_pointer:s.raw_pointer + s.raw_size]) if s.raw_size else 0.0,
        )
        for s in raw_sections
    )

    return PeMetadata(
        size_bytes=len(data),
        architecture=arch,
        entry_point=entry_point,
        sections=sections,
        imports=tuple(imports),
        strings=tuple(extract_strings(data)),
        imphash=compute_imphash(imports) if imports else None,
        overall_entropy=byte_entropy(data) if data else 0.0,
    )


def _parse_imports(data: bytes, sections: list[_RawSection], import_rva: int,
                   pe32_plus: bool) -> list[ImportEntry]:
    table_off = _rva_to_offset(sections, import_rva)
    if table_off is None:
        raise MalformedHeader("import directory rva maps to no section")

    entries = []
    for idx in range(4096):  # descriptor count bound against loops in corrupt files
        desc = _read(data, table_off + idx * 20, 20, f"import descriptor {idx}")
        orig_first_thunk, _, _, name_rva, first_thunk = struct.unpack("<IIIII", desc)
        if name_rva == 0 and first_thunk == 0 and orig_first_thunk == 0:
            break

        name_off = _rva_to_offset(sections, name_rva)
        if name_off is None:
            raise MalformedHeader(f"import name rva 0x{name_rva:x} maps to no section")
        library = _cstring(data, name_off, "import library name").lower()
        if not library:
            raise MalformedHeader("empty import library name")

        thunk_rva = orig_first_thunk or first_thunk
        thunk_off = _rva_to_offset(sections, thunk_rva)
        if thunk_off is None:
            raise MalformedHeader(f"thunk rva 0x{thunk_rva:x} maps to no section")

        width = 8 if pe32_plus else 4
        ordinal_flag = 1 << (width * 8 - 1)
        functions = []
        for t in range(65536):
            raw = _read(data, thunk_off + t * width, width, "thunk entry")
            value = struct.unpack("<Q" if pe32_plus else "<I", raw)[0]
            if value == 0:
                break
            if value & ordinal_flag:
                functions.append(f"ord{value & 0xFFFF}")
            else:
                hint_off = _rva_to_offset(sections, value)
                if hint_off is None:
                    raise MalformedHeader(f"import-by-name rva 0x{value:x} maps to no section")
                functions.append(_cstring(data, hint_off + 2, "import function name"))
        entries.append(ImportEntry(library=library, functions=tuple(functions)))
    return entries


def parse_pe_file(path: str | Path) -> PeMetadata:
    return parse_pe(Path(path).read_bytes())
