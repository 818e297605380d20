"""
Wasm core instruction table.

One row per instruction: mnemonic, opcode (prefix, code), immediate kind
and, for instructions with a fixed numeric stack effect, the operator type.
Decoder, encoder, classifier, mutation rules and the mock interpreter are
all driven from this table.
"""
import enum
import re
from dataclasses import dataclass


class DataType(enum.StrEnum):
    I32 = 'i32'
    I64 = 'i64'
    F32 = 'f32'
    F64 = 'f64'


# Value type bytes. Only the four numeric kinds are DataTypes; the rest are
# recognised so modules using them still parse.
VALTYPE_BYTES = {
    0x7F: DataType.I32,
    0x7E: DataType.I64,
    0x7D: DataType.F32,
    0x7C: DataType.F64,
}
OTHER_VALTYPES = {0x7B: 'v128', 0x70: 'funcref', 0x6F: 'externref'}


class Imm(enum.Enum):
    NONE = 0
    BLOCKTYPE = 1
    LABEL = 2
    BR_TABLE = 3
    FUNC = 4
    CALL_INDIRECT = 5
    LOCAL = 6
    GLOBAL = 7
    TABLE = 8
    MEMARG = 9
    MEMIDX = 10          # reserved zero byte
    I32 = 11
    I64 = 12
    F32 = 13
    F64 = 14
    SELECT_T = 15
    REFTYPE = 16
    TABLE_PAIR = 17
    DATA_MEM = 18
    DATA = 19
    MEM_PAIR = 20
    ELEM_TABLE = 21
    ELEM = 22


@dataclass(frozen=True)
class OperatorType:
    params: tuple[DataType, ...]
    results: tuple[DataType, ...]

    def __str__(self) -> str:
        p = ', '.join(self.params)
        r = ', '.join(self.results)
        return f'[{p}] -> [{r}]'


@dataclass(frozen=True)
class OpInfo:
    name: str
    prefix: int | None
    code: int
    imm: Imm = Imm.NONE
    sig: OperatorType | None = None

    @property
    def key(self) -> tuple[int, int]:
        """Binary opcode order: single-byte opcodes first, then prefixed."""
        return (self.prefix or 0, self.code)

    @property
    def numeric(self) -> bool:
        return self.imm is Imm.NONE and self.sig is not None

    @property
    def is_load(self) -> bool:
        return self.imm is Imm.MEMARG and '.load' in self.name

    @property
    def is_store(self) -> bool:
        return self.imm is Imm.MEMARG and '.store' in self.name


I32, I64, F32, F64 = DataType.I32, DataType.I64, DataType.F32, DataType.F64


def _sig(params, results) -> OperatorType:
    return OperatorType(tuple(params), tuple(results))


# =============================================================================
# Table
# =============================================================================

_CONTROL = [
    ('unreachable', 0x00, Imm.NONE),
    ('nop', 0x01, Imm.NONE),
    ('block', 0x02, Imm.BLOCKTYPE),
    ('loop', 0x03, Imm.BLOCKTYPE),
    ('if', 0x04, Imm.BLOCKTYPE),
    ('else', 0x05, Imm.NONE),
    ('end', 0x0B, Imm.NONE),
    ('br', 0x0C, Imm.LABEL),
    ('br_if', 0x0D, Imm.LABEL),
    ('br_table', 0x0E, Imm.BR_TABLE),
    ('return', 0x0F, Imm.NONE),
    ('call', 0x10, Imm.FUNC),
    ('call_indirect', 0x11, Imm.CALL_INDIRECT),
    ('drop', 0x1A, Imm.NONE),
    ('select', 0x1B, Imm.NONE),
    ('select_t', 0x1C, Imm.SELECT_T),
]

_VARIABLE = [
    ('local.get', 0x20, Imm.LOCAL),
    ('local.set', 0x21, Imm.LOCAL),
    ('local.tee', 0x22, Imm.LOCAL),
    ('global.get', 0x23, Imm.GLOBAL),
    ('global.set', 0x24, Imm.GLOBAL),
    ('table.get', 0x25, Imm.TABLE),
    ('table.set', 0x26, Imm.TABLE),
]

_LOADS = [
    ('i32.load', I32), ('i64.load', I64), ('f32.load', F32), ('f64.load', F64),
    ('i32.load8_s', I32), ('i32.load8_u', I32), ('i32.load16_s', I32), ('i32.load16_u', I32),
    ('i64.load8_s', I64), ('i64.load8_u', I64), ('i64.load16_s', I64), ('i64.load16_u', I64),
    ('i64.load32_s', I64), ('i64.load32_u', I64),
]
_STORES = [
    ('i32.store', I32), ('i64.store', I64), ('f32.store', F32), ('f64.store', F64),
    ('i32.store8', I32), ('i32.store16', I32),
    ('i64.store8', I64), ('i64.store16', I64), ('i64.store32', I64),
]

# Natural alignment (log2 of access width) per memory instruction.
_WIDTH_ALIGN = {'8': 0, '16': 1, '32': 2}
NATURAL_ALIGN = {}
for _name, _t in _LOADS + _STORES:
    _width = re.search(r'(\d+)', _name.split('.', 1)[1])
    if _width:
        NATURAL_ALIGN[_name] = _WIDTH_ALIGN[_width.group(1)]
    else:
        NATURAL_ALIGN[_name] = 2 if _t in (I32, F32) else 3

_CMP_INT = ['eq', 'ne', 'lt_s', 'lt_u', 'gt_s', 'gt_u', 'le_s', 'le_u', 'ge_s', 'ge_u']
_CMP_FLOAT = ['eq', 'ne', 'lt', 'gt', 'le', 'ge']
_UN_INT = ['clz', 'ctz', 'popcnt']
_BIN_INT = ['add', 'sub', 'mul', 'div_s', 'div_u', 'rem_s', 'rem_u',
            'and', 'or', 'xor', 'shl', 'shr_s', 'shr_u', 'rotl', 'rotr']
_UN_FLOAT = ['abs', 'neg', 'ceil', 'floor', 'trunc', 'nearest', 'sqrt']
_BIN_FLOAT = ['add', 'sub', 'mul', 'div', 'min', 'max', 'copysign']

_CONVERSIONS = [
    ('i32.wrap_i64', I64, I32),
    ('i32.trunc_f32_s', F32, I32), ('i32.trunc_f32_u', F32, I32),
    ('i32.trunc_f64_s', F64, I32), ('i32.trunc_f64_u', F64, I32),
    ('i64.extend_i32_s', I32, I64), ('i64.extend_i32_u', I32, I64),
    ('i64.trunc_f32_s', F32, I64), ('i64.trunc_f32_u', F32, I64),
    ('i64.trunc_f64_s', F64, I64), ('i64.trunc_f64_u', F64, I64),
    ('f32.convert_i32_s', I32, F32), ('f32.convert_i32_u', I32, F32),
    ('f32.convert_i64_s', I64, F32), ('f32.convert_i64_u', I64, F32),
    ('f32.demote_f64', F64, F32),
    ('f64.convert_i32_s', I32, F64), ('f64.convert_i32_u', I32, F64),
    ('f64.convert_i64_s', I64, F64), ('f64.convert_i64_u', I64, F64),
    ('f64.promote_f32', F32, F64),
    ('i32.reinterpret_f32', F32, I32), ('i64.reinterpret_f64', F64, I64),
    ('f32.reinterpret_i32', I32, F32), ('f64.reinterpret_i64', I64, F64),
    ('i32.extend8_s', I32, I32), ('i32.extend16_s', I32, I32),
    ('i64.extend8_s', I64, I64), ('i64.extend16_s', I64, I64), ('i64.extend32_s', I64, I64),
]

_SAT_TRUNC = [
    ('i32.trunc_sat_f32_s', F32, I32), ('i32.trunc_sat_f32_u', F32, I32),
    ('i32.trunc_sat_f64_s', F64, I32), ('i32.trunc_sat_f64_u', F64, I32),
    ('i64.trunc_sat_f32_s', F32, I64), ('i64.trunc_sat_f32_u', F32, I64),
    ('i64.trunc_sat_f64_s', F64, I64), ('i64.trunc_sat_f64_u', F64, I64),
]

_BULK = [
    ('memory.init', 8, Imm.DATA_MEM),
    ('data.drop', 9, Imm.DATA),
    ('memory.copy', 10, Imm.MEM_PAIR),
    ('memory.fill', 11, Imm.MEMIDX),
    ('table.init', 12, Imm.ELEM_TABLE),
    ('elem.drop', 13, Imm.ELEM),
    ('table.copy', 14, Imm.TABLE_PAIR),
    ('table.grow', 15, Imm.TABLE),
    ('table.size', 16, Imm.TABLE),
    ('table.fill', 17, Imm.TABLE),
]


def _build_table() -> list[OpInfo]:
    rows = []
    rows += [OpInfo(name, None, code, imm) for name, code, imm in _CONTROL]
    rows += [OpInfo(name, None, code, imm) for name, code, imm in _VARIABLE]

    code = 0x28
    for name, t in _LOADS:
        rows.append(OpInfo(name, None, code, Imm.MEMARG, _sig([I32], [t])))
        code += 1
    for name, t in _STORES:
        rows.append(OpInfo(name, None, code, Imm.MEMARG, _sig([I32, t], [])))
        code += 1
    rows.append(OpInfo('memory.size', None, 0x3F, Imm.MEMIDX))
    rows.append(OpInfo('memory.grow', None, 0x40, Imm.MEMIDX))

    rows.append(OpInfo('i32.const', None, 0x41, Imm.I32, _sig([], [I32])))
    rows.append(OpInfo('i64.const', None, 0x42, Imm.I64, _sig([], [I64])))
    rows.append(OpInfo('f32.const', None, 0x43, Imm.F32, _sig([], [F32])))
    rows.append(OpInfo('f64.const', None, 0x44, Imm.F64, _sig([], [F64])))

    code = 0x45
    for t, cmps in ((I32, _CMP_INT), (I64, _CMP_INT)):
        rows.append(OpInfo(f'{t}.eqz', None, code, sig=_sig([t], [I32])))
        code += 1
        for op in cmps:
            rows.append(OpInfo(f'{t}.{op}', None, code, sig=_sig([t, t], [I32])))
            code += 1
    for t in (F32, F64):
        for op in _CMP_FLOAT:
            rows.append(OpInfo(f'{t}.{op}', None, code, sig=_sig([t, t], [I32])))
            code += 1
    for t in (I32, I64):
        for op in _UN_INT:
            rows.append(OpInfo(f'{t}.{op}', None, code, sig=_sig([t], [t])))
            code += 1
        for op in _BIN_INT:
            rows.append(OpInfo(f'{t}.{op}', None, code, sig=_sig([t, t], [t])))
            code += 1
    for t in (F32, F64):
        for op in _UN_FLOAT:
            rows.append(OpInfo(f'{t}.{op}', None, code, sig=_sig([t], [t])))
            code += 1
        for op in _BIN_FLOAT:
            rows.append(OpInfo(f'{t}.{op}', None, code, sig=_sig([t, t], [t])))
            code += 1
    for name, src, dst in _CONVERSIONS:
        rows.append(OpInfo(name, None, code, sig=_sig([src], [dst])))
        code += 1
    assert code == 0xC5, hex(code)

    rows.append(OpInfo('ref.null', None, 0xD0, Imm.REFTYPE))
    rows.append(OpInfo('ref.is_null', None, 0xD1))
    rows.append(OpInfo('ref.func', None, 0xD2, Imm.FUNC))

    for sub, (name, src, dst) in enumerate(_SAT_TRUNC):
        rows.append(OpInfo(name, 0xFC, sub, sig=_sig([src], [dst])))
    for name, sub, imm in _BULK:
        rows.append(OpInfo(name, 0xFC, sub, imm))
    return rows


TABLE = _build_table()
BY_NAME = {op.name: op for op in TABLE}
BY_CODE = {(op.prefix, op.code): op for op in TABLE}

CONST_FOR = {I32: 'i32.const', I64: 'i64.const', F32: 'f32.const', F64: 'f64.const'}

# Instructions never targeted by mutation rules.
CONTROL_NAMES = frozenset(name for name, _, _ in _CONTROL)


def numeric_operators() -> list[OpInfo]:
    """Every core numeric operator (no immediates), in opcode order."""
    return sorted((op for op in TABLE if op.numeric), key=lambda op: op.key)
