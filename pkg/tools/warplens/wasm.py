"""
Wasm module model: parse, classify, re-encode and validate.

Only the code section is modelled instruction by instruction; every other
section is carried as raw bytes and re-emitted verbatim, so mutants differ
from the original only inside function bodies.
"""
import enum
import io
import logging
import re
import struct
import warnings
from dataclasses import dataclass, field, replace
from functools import cache, cached_property
from pathlib import Path

import leb128
import wasmtime

from .errors import EncodeOverflow, MalformedBinary, UnsupportedFeature
from .opcodes import (
    BY_CODE, BY_NAME, CONTROL_NAMES, NATURAL_ALIGN,
    OTHER_VALTYPES, VALTYPE_BYTES, DataType, Imm, OpInfo, OperatorType,
    numeric_operators,
)

log = logging.getLogger(__name__)

MAGIC = b'\x00asm'
VERSION = b'\x01\x00\x00\x00'
CODE_SECTION = 10


class InstrCategory(enum.StrEnum):
    OPERAND = 'Operand'
    OPERATOR = 'Operator'
    CONTROL = 'Control'
    OTHER = 'Other'


# Value types are DataType for the numeric four, a plain string otherwise.
ValType = DataType | str


def valtype_name(byte: int) -> ValType:
    if byte in VALTYPE_BYTES:
        return VALTYPE_BYTES[byte]
    return OTHER_VALTYPES.get(byte, f'0x{byte:02x}')


# =============================================================================
# Model types
# =============================================================================

@dataclass(frozen=True)
class FuncType:
    params: tuple[ValType, ...]
    results: tuple[ValType, ...]


@dataclass(frozen=True)
class GlobalDef:
    type: ValType
    mutable: bool
    init: tuple['InstrRecord', ...] | None = None   # None for imports


@dataclass(frozen=True)
class DataSegment:
    memory: int
    offset: tuple['InstrRecord', ...] | None        # None for passive segments
    data: bytes


@dataclass(frozen=True)
class InstrRecord:
    offset: int
    name: str
    imm: tuple = ()
    category: InstrCategory = InstrCategory.OTHER
    signature: OperatorType | None = None
    fused: bool = False

    @property
    def op(self) -> OpInfo:
        return BY_NAME[self.name]

    @property
    def result(self) -> DataType | None:
        if self.category is InstrCategory.OPERAND:
            return self.signature.results[0]
        return None

    def text(self) -> str:
        return instr_text(self.name, self.imm)


@dataclass(frozen=True)
class FunctionBody:
    index: int
    type_index: int
    locals: tuple[ValType, ...]                 # params first, then declared locals
    local_groups: tuple[tuple[int, int], ...]   # declared locals as (count, valtype byte)
    instructions: tuple[InstrRecord, ...]
    raw: bytes | None = None                    # undecodable body, re-emitted verbatim
    mutable: bool = True

    @cached_property
    def encoded(self) -> bytes:
        return encode_body(self)


@dataclass(frozen=True)
class InstructionModel:
    functions: tuple[FunctionBody, ...]
    types: tuple[FuncType, ...] = ()
    imported_funcs: tuple[int, ...] = ()        # type index per imported function
    globals: tuple[GlobalDef, ...] = ()         # imported first, then defined
    memories: tuple[tuple[int, int | None], ...] = ()
    exports: tuple[tuple[str, int, int], ...] = ()
    start: int | None = None
    data: tuple[DataSegment, ...] = ()
    has_tables: bool = False
    sections: tuple[tuple[int, bytes], ...] = field(default=(), repr=False)

    def function(self, index: int) -> FunctionBody:
        return self.functions[index - len(self.imported_funcs)]

    def func_type(self, index: int) -> FuncType:
        n = len(self.imported_funcs)
        if index < n:
            return self.types[self.imported_funcs[index]]
        return self.types[self.functions[index - n].type_index]

    def export(self, name: str, kind: int = 0) -> int | None:
        for export_name, export_kind, index in self.exports:
            if export_name == name and export_kind == kind:
                return index
        return None

    def with_body(self, index: int, ops: list[tuple[str, tuple]]) -> 'InstructionModel':
        """Copy of the model with one function body replaced by ops."""
        pos = index - len(self.imported_funcs)
        func = self.functions[pos]
        records = annotate(ops, func.locals, self.global_types)
        functions = list(self.functions)
        functions[pos] = replace(func, instructions=records)
        return replace(self, functions=tuple(functions))

    @property
    def global_types(self) -> tuple[ValType, ...]:
        return tuple(g.type for g in self.globals)


# =============================================================================
# Text form
# =============================================================================

def f32_from_bits(bits: int) -> float:
    return struct.unpack('<f', struct.pack('<I', bits))[0]


def f64_from_bits(bits: int) -> float:
    return struct.unpack('<d', struct.pack('<Q', bits))[0]


def f32_bits(value: float) -> int:
    return struct.unpack('<I', struct.pack('<f', value))[0]


def f64_bits(value: float) -> int:
    return struct.unpack('<Q', struct.pack('<d', value))[0]


def _blocktype_text(bt: int) -> str:
    if bt == -64:
        return ''
    if bt < 0:
        return f' (result {valtype_name(bt & 0x7F)})'
    return f' (type {bt})'


def instr_text(name: str, imm: tuple) -> str:
    kind = BY_NAME[name].imm
    if kind is Imm.NONE or kind is Imm.MEMIDX:
        return name
    if kind is Imm.F32:
        return f'{name} {f32_from_bits(imm[0])!r}'
    if kind is Imm.F64:
        return f'{name} {f64_from_bits(imm[0])!r}'
    if kind is Imm.BLOCKTYPE:
        return name + _blocktype_text(imm[0])
    if kind is Imm.MEMARG:
        align, offset = imm
        parts = [name]
        if offset:
            parts.append(f'offset={offset}')
        if align != NATURAL_ALIGN[name]:
            parts.append(f'align={1 << align}')
        return ' '.join(parts)
    if kind is Imm.BR_TABLE:
        labels, default = imm
        return ' '.join([name, *map(str, labels), str(default)])
    if kind is Imm.CALL_INDIRECT:
        return f'{name} (type {imm[0]})'
    if kind is Imm.SELECT_T:
        return f'select (result {" ".join(valtype_name(b) for b in imm[0])})'
    return ' '.join([name, *map(str, imm)])


# =============================================================================
# Decoding
# =============================================================================

class Reader:
    """Byte reader over a Wasm binary; every short read is MalformedBinary."""

    def __init__(self, data: bytes, base: int = 0):
        self.stream = io.BytesIO(data)
        self.size = len(data)
        self.base = base

    @property
    def pos(self) -> int:
        return self.stream.tell()

    def at_end(self) -> bool:
        return self.pos >= self.size

    def fail(self, message: str):
        raise MalformedBinary(message, self.base + self.pos)

    def byte(self) -> int:
        b = self.stream.read(1)
        if not b:
            self.fail('unexpected end of data')
        return b[0]

    def peek(self) -> int:
        b = self.byte()
        self.stream.seek(-1, io.SEEK_CUR)
        return b

    def raw(self, n: int) -> bytes:
        data = self.stream.read(n)
        if len(data) != n:
            self.fail('unexpected end of data')
        return data

    def u32(self) -> int:
        try:
            value, _ = leb128.u.decode_reader(self.stream)
        except TypeError:
            self.fail('unexpected end of data in LEB128')
        if value >= 1 << 32:
            self.fail('u32 out of range')
        return value

    def signed(self, bits: int) -> int:
        try:
            value, _ = leb128.i.decode_reader(self.stream)
        except TypeError:
            self.fail('unexpected end of data in LEB128')
        if not -(1 << (bits - 1)) <= value < 1 << (bits - 1):
            self.fail(f's{bits} out of range')
        return value

    def vec(self, item) -> list:
        return [item() for _ in range(self.u32())]

    def name(self) -> str:
        return self.raw(self.u32()).decode('utf-8', errors='replace')


class _Unsupported(Exception):
    pass


def _read_immediates(r: Reader, op: OpInfo) -> tuple:
    kind = op.imm
    if kind is Imm.NONE:
        return ()
    if kind is Imm.BLOCKTYPE:
        return (r.signed(33),)
    if kind in (Imm.LABEL, Imm.FUNC, Imm.LOCAL, Imm.GLOBAL, Imm.TABLE, Imm.DATA, Imm.ELEM):
        return (r.u32(),)
    if kind is Imm.BR_TABLE:
        labels = tuple(r.vec(r.u32))
        return (labels, r.u32())
    if kind in (Imm.CALL_INDIRECT, Imm.TABLE_PAIR, Imm.ELEM_TABLE):
        return (r.u32(), r.u32())
    if kind is Imm.MEMARG:
        return (r.u32(), r.u32())
    if kind is Imm.MEMIDX or kind is Imm.REFTYPE:
        return (r.byte(),)
    if kind is Imm.DATA_MEM:
        return (r.u32(), r.byte())
    if kind is Imm.MEM_PAIR:
        return (r.byte(), r.byte())
    if kind is Imm.I32:
        return (r.signed(32),)
    if kind is Imm.I64:
        return (r.signed(64),)
    if kind is Imm.F32:
        return (struct.unpack('<I', r.raw(4))[0],)
    if kind is Imm.F64:
        return (struct.unpack('<Q', r.raw(8))[0],)
    if kind is Imm.SELECT_T:
        return (tuple(r.vec(r.byte)),)
    raise AssertionError(kind)


def read_instruction(r: Reader) -> tuple[OpInfo, tuple]:
    code = r.byte()
    prefix = None
    if code == 0xFC:
        prefix, code = 0xFC, r.u32()
    elif code in (0xFD, 0xFE, 0xFB):
        raise _Unsupported(f'prefix 0x{code:02X}')
    op = BY_CODE.get((prefix, code))
    if op is None:
        raise _Unsupported(f'opcode 0x{code:02X}' if prefix is None else f'opcode 0xFC {code}')
    return op, _read_immediates(r, op)


def read_expression(r: Reader) -> list[tuple[str, tuple]]:
    """Instructions up to the matching final `end` (excluded)."""
    ops = []
    depth = 0
    while True:
        op, imm = read_instruction(r)
        if op.name in ('block', 'loop', 'if'):
            depth += 1
        elif op.name == 'end':
            if depth == 0:
                return ops
            depth -= 1
        ops.append((op.name, imm))


# =============================================================================
# Classification
# =============================================================================

def _categorize(name: str, fused: bool, signature: OperatorType | None) -> InstrCategory:
    if name in CONTROL_NAMES:
        return InstrCategory.CONTROL
    if signature is None:
        return InstrCategory.OTHER
    if name.endswith('.const') or name in ('local.get', 'global.get'):
        return InstrCategory.OPERAND
    if BY_NAME[name].is_load and fused:
        return InstrCategory.OPERAND
    return InstrCategory.OPERATOR


def classify_instruction(record: InstrRecord) -> InstrCategory:
    """Category of a parsed record; Other for anything outside the numeric subset."""
    if record.name not in BY_NAME:
        return InstrCategory.OTHER
    return _categorize(record.name, record.fused, record.signature)


def _signature(name: str, imm: tuple, local_types, global_types) -> OperatorType | None:
    op = BY_NAME[name]
    if name in ('local.get', 'local.set', 'local.tee', 'global.get', 'global.set'):
        types = local_types if name.startswith('local') else global_types
        if imm[0] >= len(types):
            return None
        t = types[imm[0]]
        if not isinstance(t, DataType):
            return None
        if name.endswith('.get'):
            return OperatorType((), (t,))
        if name == 'local.tee':
            return OperatorType((t,), (t,))
        return OperatorType((t,), ())
    return op.sig


def annotate(ops, local_types, global_types) -> tuple[InstrRecord, ...]:
    """Turn (name, imm) pairs into classified, position-indexed records."""
    records = []
    for i, (name, imm) in enumerate(ops):
        op = BY_NAME[name]
        fused = op.is_load and i > 0 and ops[i - 1][0] == 'i32.const'
        sig = _signature(name, imm, local_types, global_types)
        records.append(InstrRecord(i, name, tuple(imm), _categorize(name, fused, sig), sig, fused))
    return tuple(records)


def substitution_group(sig: OperatorType) -> list[str]:
    """Numeric operators sharing sig, in core opcode order."""
    return [op.name for op in numeric_operators() if op.sig == sig]


# =============================================================================
# Module parsing
# =============================================================================

def _read_functype(r: Reader) -> FuncType:
    if r.byte() != 0x60:
        r.fail('expected function type')
    params = tuple(valtype_name(b) for b in r.vec(r.byte))
    results = tuple(valtype_name(b) for b in r.vec(r.byte))
    return FuncType(params, results)


def _read_limits(r: Reader) -> tuple[int, int | None]:
    flag = r.byte()
    lo = r.u32()
    hi = r.u32() if flag & 1 else None
    return lo, hi


def _const_expr(r: Reader, global_types) -> tuple[InstrRecord, ...]:
    try:
        ops = read_expression(r)
    except _Unsupported as exc:
        r.fail(f'unsupported constant expression: {exc}')
    return annotate(ops, (), global_types)


def parse_module(data: bytes) -> InstructionModel:
    """Parse a Wasm binary into an InstructionModel."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise MalformedBinary('bad magic number', 0)
    if data[4:8] != VERSION:
        raise MalformedBinary('unsupported binary version', 4)

    r = Reader(data[8:], base=8)
    sections: list[tuple[int, bytes]] = []
    types: list[FuncType] = []
    imported_funcs: list[int] = []
    global_defs: list[GlobalDef] = []
    func_types: list[int] = []
    memories: list[tuple[int, int | None]] = []
    exports: list[tuple[str, int, int]] = []
    data_segments: list[DataSegment] = []
    functions: list[FunctionBody] = []
    start = None
    has_tables = False

    while not r.at_end():
        section_id = r.byte()
        size = r.u32()
        payload_base = r.base + r.pos
        payload = r.raw(size)
        sections.append((section_id, b'' if section_id == CODE_SECTION else payload))
        s = Reader(payload, base=payload_base)

        if section_id == 1:
            types = s.vec(lambda: _read_functype(s))
        elif section_id == 2:
            for _ in range(s.u32()):
                s.name()
                s.name()
                kind = s.byte()
                if kind == 0:
                    imported_funcs.append(s.u32())
                elif kind == 1:
                    s.byte()
                    _read_limits(s)
                    has_tables = True
                elif kind == 2:
                    memories.append(_read_limits(s))
                elif kind == 3:
                    t = valtype_name(s.byte())
                    global_defs.append(GlobalDef(t, bool(s.byte())))
                else:
                    s.fail(f'unknown import kind {kind}')
        elif section_id == 3:
            func_types = s.vec(s.u32)
        elif section_id == 4:
            has_tables = has_tables or s.u32() > 0
        elif section_id == 5:
            memories += s.vec(lambda: _read_limits(s))
        elif section_id == 6:
            for _ in range(s.u32()):
                t = valtype_name(s.byte())
                mutable = bool(s.byte())
                init = _const_expr(s, tuple(g.type for g in global_defs))
                global_defs.append(GlobalDef(t, mutable, init))
        elif section_id == 7:
            exports = s.vec(lambda: (s.name(), s.byte(), s.u32()))
        elif section_id == 8:
            start = s.u32()
        elif section_id == 11:
            data_segments = s.vec(lambda: _read_data_segment(s, global_defs))
        elif section_id == CODE_SECTION:
            functions = _read_code(s, types, func_types, imported_funcs, global_defs)

    if len(functions) != len(func_types):
        raise MalformedBinary('function and code section counts differ')

    return InstructionModel(
        functions=tuple(functions),
        types=tuple(types),
        imported_funcs=tuple(imported_funcs),
        globals=tuple(global_defs),
        memories=tuple(memories),
        exports=tuple(exports),
        start=start,
        data=tuple(data_segments),
        has_tables=has_tables,
        sections=tuple(sections),
    )


def _read_data_segment(s: Reader, global_defs) -> DataSegment:
    flag = s.u32()
    global_types = tuple(g.type for g in global_defs)
    if flag == 0:
        offset = _const_expr(s, global_types)
        return DataSegment(0, offset, s.raw(s.u32()))
    if flag == 1:
        return DataSegment(0, None, s.raw(s.u32()))
    if flag == 2:
        memory = s.u32()
        offset = _const_expr(s, global_types)
        return DataSegment(memory, offset, s.raw(s.u32()))
    s.fail(f'unknown data segment flag {flag}')


def _read_code(s: Reader, types, func_types, imported_funcs, global_defs) -> list[FunctionBody]:
    global_types = tuple(g.type for g in global_defs)
    functions = []
    for i in range(s.u32()):
        size = s.u32()
        body_base = s.base + s.pos
        body = s.raw(size)
        b = Reader(body, base=body_base)
        index = len(imported_funcs) + i
        if i >= len(func_types):
            raise MalformedBinary('more bodies than declared functions', body_base)
        type_index = func_types[i]
        params = types[type_index].params

        groups = b.vec(lambda: (b.u32(), b.byte()))
        declared = [valtype_name(t) for count, t in groups for _ in range(count)]
        local_types = tuple(params) + tuple(declared)

        try:
            ops = read_expression(b)
            if not b.at_end():
                b.fail('trailing bytes after function end')
        except _Unsupported as exc:
            warnings.warn(f'function {index}: {exc}; body kept verbatim', UnsupportedFeature, stacklevel=2)
            functions.append(FunctionBody(index, type_index, local_types, tuple(groups), (),
                                          raw=body, mutable=False))
            continue

        records = annotate(ops, local_types, global_types)
        functions.append(FunctionBody(index, type_index, local_types, tuple(groups), records))
    return functions


# =============================================================================
# Encoding
# =============================================================================

def _u32(value: int) -> bytes:
    if not 0 <= value < 1 << 32:
        raise EncodeOverflow(f'u32 immediate out of range: {value}')
    return bytes(leb128.u.encode(value))


def _signed(value: int, bits: int) -> bytes:
    if not -(1 << (bits - 1)) <= value < 1 << (bits - 1):
        raise EncodeOverflow(f's{bits} immediate out of range: {value}')
    return bytes(leb128.i.encode(value))


def _byte(value: int) -> bytes:
    if not 0 <= value < 256:
        raise EncodeOverflow(f'byte immediate out of range: {value}')
    return bytes([value])


def encode_instruction(name: str, imm: tuple = ()) -> bytes:
    op = BY_NAME[name]
    out = bytearray()
    if op.prefix is None:
        out.append(op.code)
    else:
        out.append(op.prefix)
        out += _u32(op.code)

    kind = op.imm
    if kind is Imm.NONE:
        pass
    elif kind is Imm.BLOCKTYPE:
        out += _signed(imm[0], 33)
    elif kind in (Imm.LABEL, Imm.FUNC, Imm.LOCAL, Imm.GLOBAL, Imm.TABLE, Imm.DATA, Imm.ELEM):
        out += _u32(imm[0])
    elif kind is Imm.BR_TABLE:
        labels, default = imm
        out += _u32(len(labels))
        for label in labels:
            out += _u32(label)
        out += _u32(default)
    elif kind in (Imm.CALL_INDIRECT, Imm.TABLE_PAIR, Imm.ELEM_TABLE, Imm.MEMARG):
        out += _u32(imm[0]) + _u32(imm[1])
    elif kind is Imm.MEMIDX or kind is Imm.REFTYPE:
        out += _byte(imm[0])
    elif kind is Imm.DATA_MEM:
        out += _u32(imm[0]) + _byte(imm[1])
    elif kind is Imm.MEM_PAIR:
        out += _byte(imm[0]) + _byte(imm[1])
    elif kind is Imm.I32:
        out += _signed(imm[0], 32)
    elif kind is Imm.I64:
        out += _signed(imm[0], 64)
    elif kind is Imm.F32:
        if not 0 <= imm[0] < 1 << 32:
            raise EncodeOverflow(f'f32 bit pattern out of range: {imm[0]}')
        out += struct.pack('<I', imm[0])
    elif kind is Imm.F64:
        if not 0 <= imm[0] < 1 << 64:
            raise EncodeOverflow(f'f64 bit pattern out of range: {imm[0]}')
        out += struct.pack('<Q', imm[0])
    elif kind is Imm.SELECT_T:
        out += _u32(len(imm[0])) + b''.join(_byte(b) for b in imm[0])
    return bytes(out)


def encode_body(func: FunctionBody) -> bytes:
    if func.raw is not None:
        return func.raw
    out = bytearray(_u32(len(func.local_groups)))
    for count, valtype in func.local_groups:
        out += _u32(count) + _byte(valtype)
    for record in func.instructions:
        out += encode_instruction(record.name, record.imm)
    out.append(0x0B)
    return bytes(out)


def encode_module(model: InstructionModel) -> bytes:
    """Encode a model; non-code sections are re-emitted verbatim."""
    out = bytearray(MAGIC + VERSION)
    sections = model.sections
    if model.functions and not any(sid == CODE_SECTION for sid, _ in sections):
        sections = sections + ((CODE_SECTION, b''),)
    for section_id, payload in sections:
        if section_id == CODE_SECTION:
            payload = bytearray(_u32(len(model.functions)))
            for func in model.functions:
                body = func.encoded
                payload += _u32(len(body)) + body
        out.append(section_id)
        out += _u32(len(payload)) + payload
    return bytes(out)


# =============================================================================
# Validation and loading
# =============================================================================

@dataclass(frozen=True)
class ValidationVerdict:
    accepted: bool
    rule: str = ''
    offset: int | None = None

    def __bool__(self) -> bool:
        return self.accepted


@cache
def _engine() -> wasmtime.Engine:
    return wasmtime.Engine()


_OFFSET_RE = re.compile(r'\(at offset (0x[0-9a-fA-F]+|\d+)\)')


def validate_module(data: bytes) -> ValidationVerdict:
    """Validate with wasmtime, independently of this module's own encoder."""
    try:
        wasmtime.Module.validate(_engine(), data)
    except wasmtime.WasmtimeError as exc:
        lines = [line.strip() for line in str(exc).splitlines() if line.strip()]
        detail = lines[-1] if lines else str(exc)
        detail = re.sub(r'^\d+:\s*', '', detail)
        offset = None
        m = _OFFSET_RE.search(detail)
        if m:
            offset = int(m.group(1), 0)
            detail = _OFFSET_RE.sub('', detail).strip()
        return ValidationVerdict(False, detail, offset)
    return ValidationVerdict(True)


def load_module_bytes(path: Path) -> bytes:
    """Read a .wasm file, converting .wat text first."""
    path = Path(path)
    if path.suffix == '.wat':
        return bytes(wasmtime.wat2wasm(path.read_text()))
    return path.read_bytes()


def stack_effect(records) -> OperatorType:
    """Net stack effect of a straight-line run of records."""
    needed: list[DataType] = []
    stack: list[DataType] = []
    for record in records:
        if record.signature is None:
            raise ValueError(f'{record.name} has no fixed stack effect')
        for t in reversed(record.signature.params):
            if stack:
                top = stack.pop()
                if top != t:
                    raise ValueError(f'{record.name}: expected {t}, found {top}')
            else:
                needed.insert(0, t)
        stack.extend(record.signature.results)
    return OperatorType(tuple(needed), tuple(stack))


def const_ops(t: DataType, value) -> tuple[str, tuple]:
    """(name, imm) for `t.const value`; floats given as Python floats."""
    if t is DataType.F32:
        return ('f32.const', (f32_bits(value),))
    if t is DataType.F64:
        return ('f64.const', (f64_bits(value),))
    return (f'{t}.const', (int(value),))
