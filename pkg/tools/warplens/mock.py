"""
Mock runtime with a deterministic cost model.

Interprets the core numeric, memory, variable and control subset of Wasm
and accumulates pseudo-time from per-instruction costs. Multiplier patterns
make selected instructions expensive and, with `expansion`, emit several
pseudo machine instructions per Wasm instruction in the dump, so a planted
"bug" shows up both in timing and in the machine-code diff.

Cost model file (TOML):

    default_cost = 1
    step_budget = 100000000
    max_pages = 256                 # memory.grow returns -1 past this
    loop_amplification = true

    [base]
    "i64.div_u" = 2

    [[multiplier]]
    pattern = "i64.div_*"
    factor = 50
    expansion = 5
"""
import fnmatch
import hashlib
import logging
import math
import struct
import sys
import tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .disasm import DisassembledFunction, Disassembly, MachineInstr, serialize_disassembly
from .errors import ConfigError, MalformedBinary, StepBudgetExceeded, Trap, UnsupportedModule
from .harness import PSEUDO_TIME_MARKER, TIMEOUT_EXIT, ExecutionOutcome, TimingSample
from .opcodes import BY_NAME, DataType, Imm
from .wasm import (
    InstructionModel, encode_instruction, f32_from_bits, f64_from_bits,
    load_module_bytes, parse_module,
)

log = logging.getLogger(__name__)

PAGE = 65536
MAX_PAGES = 65536
MAX_CALL_DEPTH = 200
TRAP_EXIT = 3
DEFAULT_STEP_BUDGET = 100_000_000
DEFAULT_MAX_PAGES = 256

M32 = (1 << 32) - 1
M64 = (1 << 64) - 1


# =============================================================================
# Cost model
# =============================================================================

@dataclass(frozen=True)
class CostMultiplier:
    pattern: str
    factor: float
    expansion: int = 1


@dataclass(frozen=True)
class CostModel:
    base: dict[str, float] = field(default_factory=dict)
    multipliers: tuple[CostMultiplier, ...] = ()
    default_cost: float = 1.0
    loop_amplification: bool = True
    step_budget: int = DEFAULT_STEP_BUDGET
    max_pages: int = DEFAULT_MAX_PAGES

    def cost(self, name: str) -> float:
        value = self.base.get(name, self.default_cost)
        for m in self.multipliers:
            if fnmatch.fnmatchcase(name, m.pattern):
                value *= m.factor
        return value

    def expansion(self, name: str) -> int:
        return max([m.expansion for m in self.multipliers if fnmatch.fnmatchcase(name, m.pattern)], default=1)

    def problems(self) -> list[str]:
        errors = []
        if self.default_cost <= 0:
            errors.append('default_cost must be positive')
        for name, value in self.base.items():
            if value <= 0:
                errors.append(f'base cost of {name} must be positive')
        for m in self.multipliers:
            if m.factor <= 0:
                errors.append(f'multiplier {m.pattern}: factor must be positive')
            if m.expansion < 1:
                errors.append(f'multiplier {m.pattern}: expansion must be at least 1')
        if self.step_budget < 1:
            errors.append('step_budget must be positive')
        if not 1 <= self.max_pages <= MAX_PAGES:
            errors.append(f'max_pages must be in [1, {MAX_PAGES}]')
        return errors


def load_cost_model(path: Path | None) -> CostModel:
    """Load a cost model; None gives the uniform model."""
    if path is None:
        return CostModel()
    try:
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f'cannot read cost model {path}: {exc}') from exc
    multipliers = tuple(
        CostMultiplier(m['pattern'], float(m.get('factor', 1)), int(m.get('expansion', 1)))
        for m in data.get('multiplier', [])
    )
    model = CostModel(
        base={k: float(v) for k, v in data.get('base', {}).items()},
        multipliers=multipliers,
        default_cost=float(data.get('default_cost', 1)),
        loop_amplification=bool(data.get('loop_amplification', True)),
        step_budget=int(data.get('step_budget', DEFAULT_STEP_BUDGET)),
        max_pages=int(data.get('max_pages', DEFAULT_MAX_PAGES)),
    )
    errors = model.problems()
    if errors:
        raise ConfigError(f'{path}: ' + '; '.join(errors))
    return model


# =============================================================================
# Numeric semantics
# =============================================================================

def _signed(v: int, bits: int) -> int:
    return v - (1 << bits) if v >> (bits - 1) else v


def _f32(x: float) -> float:
    try:
        return struct.unpack('<f', struct.pack('<f', x))[0]
    except OverflowError:
        return math.copysign(math.inf, x)


def _f64(x: float) -> float:
    return x


def _int_ops(t: str, bits: int) -> dict:
    mask = (1 << bits) - 1
    lo = -(1 << (bits - 1))

    def s(v):
        return _signed(v, bits)

    def nonzero(b):
        if b == 0:
            raise Trap('integer divide by zero')

    def div_s(a, b):
        nonzero(b)
        x, y = s(a), s(b)
        if x == lo and y == -1:
            raise Trap('integer overflow')
        q = abs(x) // abs(y)
        return (q if (x < 0) == (y < 0) else -q) & mask

    def rem_s(a, b):
        nonzero(b)
        x, y = s(a), s(b)
        r = abs(x) % abs(y)
        return (-r if x < 0 else r) & mask

    def div_u(a, b):
        nonzero(b)
        return a // b

    def rem_u(a, b):
        nonzero(b)
        return a % b

    def rotl(a, b):
        k = b % bits
        return ((a << k) | (a >> (bits - k))) & mask

    def rotr(a, b):
        k = b % bits
        return ((a >> k) | (a << (bits - k))) & mask

    ops = {
        'eqz': lambda a: int(a == 0),
        'eq': lambda a, b: int(a == b),
        'ne': lambda a, b: int(a != b),
        'lt_s': lambda a, b: int(s(a) < s(b)),
        'lt_u': lambda a, b: int(a < b),
        'gt_s': lambda a, b: int(s(a) > s(b)),
        'gt_u': lambda a, b: int(a > b),
        'le_s': lambda a, b: int(s(a) <= s(b)),
        'le_u': lambda a, b: int(a <= b),
        'ge_s': lambda a, b: int(s(a) >= s(b)),
        'ge_u': lambda a, b: int(a >= b),
        'clz': lambda a: bits - a.bit_length(),
        'ctz': lambda a: bits if a == 0 else (a & -a).bit_length() - 1,
        'popcnt': lambda a: a.bit_count(),
        'add': lambda a, b: (a + b) & mask,
        'sub': lambda a, b: (a - b) & mask,
        'mul': lambda a, b: (a * b) & mask,
        'div_s': div_s,
        'div_u': div_u,
        'rem_s': rem_s,
        'rem_u': rem_u,
        'and': lambda a, b: a & b,
        'or': lambda a, b: a | b,
        'xor': lambda a, b: a ^ b,
        'shl': lambda a, b: (a << (b % bits)) & mask,
        'shr_s': lambda a, b: (s(a) >> (b % bits)) & mask,
        'shr_u': lambda a, b: a >> (b % bits),
        'rotl': rotl,
        'rotr': rotr,
    }
    for n in (8, 16, 32):
        if n < bits:
            ops[f'extend{n}_s'] = lambda a, n=n: _signed(a & ((1 << n) - 1), n) & mask
    return {f'{t}.{k}': v for k, v in ops.items()}


def _fdiv(a, b):
    if b == 0:
        if a == 0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _fmin(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == b == 0:
        return a if math.copysign(1.0, a) < 0 else b
    return min(a, b)


def _fmax(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == b == 0:
        return b if math.copysign(1.0, a) < 0 else a
    return max(a, b)


def _rounding(fn):
    def op(x):
        if math.isnan(x) or math.isinf(x):
            return x
        return math.copysign(float(fn(x)), x)
    return op


def _float_ops(t: str, rnd) -> dict:
    ops = {
        'eq': lambda a, b: int(a == b),
        'ne': lambda a, b: int(a != b),
        'lt': lambda a, b: int(a < b),
        'gt': lambda a, b: int(a > b),
        'le': lambda a, b: int(a <= b),
        'ge': lambda a, b: int(a >= b),
        'abs': abs,
        'neg': lambda a: -a,
        'ceil': _rounding(math.ceil),
        'floor': _rounding(math.floor),
        'trunc': _rounding(math.trunc),
        'nearest': _rounding(round),
        'sqrt': lambda a: math.nan if a < 0 else rnd(math.sqrt(a)),
        'add': lambda a, b: rnd(a + b),
        'sub': lambda a, b: rnd(a - b),
        'mul': lambda a, b: rnd(a * b),
        'div': lambda a, b: rnd(_fdiv(a, b)),
        'min': _fmin,
        'max': _fmax,
        'copysign': math.copysign,
    }
    return {f'{t}.{k}': v for k, v in ops.items()}


def _truncate(bits: int, signed: bool, saturate: bool):
    lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
    mask = (1 << bits) - 1

    def op(x):
        if math.isnan(x):
            if saturate:
                return 0
            raise Trap('invalid conversion to integer')
        v = (hi if x > 0 else lo) if math.isinf(x) else math.trunc(x)
        if math.isinf(x) or not lo <= v <= hi:
            if not saturate:
                raise Trap('integer overflow')
            v = max(lo, min(hi, v))
        return v & mask
    return op


def _conversions() -> dict:
    ops = {
        'i32.wrap_i64': lambda a: a & M32,
        'i64.extend_i32_s': lambda a: _signed(a, 32) & M64,
        'i64.extend_i32_u': lambda a: a,
        'f32.demote_f64': _f32,
        'f64.promote_f32': _f64,
        'i32.reinterpret_f32': lambda x: struct.unpack('<I', struct.pack('<f', x))[0],
        'i64.reinterpret_f64': lambda x: struct.unpack('<Q', struct.pack('<d', x))[0],
        'f32.reinterpret_i32': f32_from_bits,
        'f64.reinterpret_i64': f64_from_bits,
    }
    widths = {'i32': 32, 'i64': 64}
    for dst, dbits in widths.items():
        for src in ('f32', 'f64'):
            for sign in ('s', 'u'):
                ops[f'{dst}.trunc_{src}_{sign}'] = _truncate(dbits, sign == 's', False)
                ops[f'{dst}.trunc_sat_{src}_{sign}'] = _truncate(dbits, sign == 's', True)
    for dst, rnd in (('f32', _f32), ('f64', _f64)):
        for src, sbits in widths.items():
            ops[f'{dst}.convert_{src}_s'] = lambda a, sbits=sbits, rnd=rnd: rnd(float(_signed(a, sbits)))
            ops[f'{dst}.convert_{src}_u'] = lambda a, rnd=rnd: rnd(float(a))
    return ops


NUMERIC = {
    **_int_ops('i32', 32), **_int_ops('i64', 64),
    **_float_ops('f32', _f32), **_float_ops('f64', _f64),
    **_conversions(),
}

# name -> (width in bytes, signed, kind)
_ACCESS = {}
for _op in BY_NAME.values():
    if _op.imm is not Imm.MEMARG:
        continue
    _t, _, _rest = _op.name.partition('.')
    _digits = ''.join(ch for ch in _rest if ch.isdigit())
    _width = int(_digits) // 8 if _digits else (4 if _t in ('i32', 'f32') else 8)
    _ACCESS[_op.name] = (_width, _rest.endswith('_s'), _t)

ZERO = {DataType.I32: 0, DataType.I64: 0, DataType.F32: 0.0, DataType.F64: 0.0}


def _const_value(name: str, imm: tuple):
    if name == 'i32.const':
        return imm[0] & M32
    if name == 'i64.const':
        return imm[0] & M64
    if name == 'f32.const':
        return f32_from_bits(imm[0])
    return f64_from_bits(imm[0])


def format_value(t, v) -> str:
    if t is DataType.I32:
        return str(_signed(v, 32))
    if t is DataType.I64:
        return str(_signed(v, 64))
    return repr(v)


# =============================================================================
# Interpreter
# =============================================================================

@dataclass
class _Label:
    loop: bool
    height: int
    arity: int
    start: int
    end: int


@dataclass
class _Compiled:
    index: int
    records: tuple
    locals: tuple
    costs: list[float]
    ends: dict[int, int]
    elses: dict[int, int]


class Machine:
    """One instantiated module under a cost model."""

    def __init__(self, model: InstructionModel, cost_model: CostModel):
        if model.imported_funcs or any(g.init is None for g in model.globals):
            raise UnsupportedModule('modules with imports are not supported')
        if model.has_tables:
            raise UnsupportedModule('modules with tables are not supported')
        if len(model.memories) > 1:
            raise UnsupportedModule('multiple memories are not supported')
        self.model = model
        self.cost_model = cost_model
        self.steps = 0
        self.pseudo_time = 0.0
        self._seen: set[tuple[int, int]] = set()
        self.compiled = {f.index: self._compile(f) for f in model.functions}

        declared, limit = model.memories[0] if model.memories else (1, None)
        self.max_pages = min(limit if limit is not None else MAX_PAGES, cost_model.max_pages)
        if declared > self.max_pages:
            raise UnsupportedModule(f'initial memory of {declared} pages exceeds the {self.max_pages} page limit')
        self.memory = bytearray(max(1, declared) * PAGE)
        self.globals = [self._eval_const(g.init) for g in model.globals]
        for segment in model.data:
            if segment.offset is None:
                continue
            base = self._eval_const(segment.offset)
            if base + len(segment.data) > len(self.memory):
                raise Trap('out of bounds memory access')
            self.memory[base:base + len(segment.data)] = segment.data

    def _compile(self, func) -> _Compiled:
        if func.raw is not None:
            raise UnsupportedModule(f'function {func.index} uses unsupported instructions')
        ends, elses, open_blocks = {}, {}, []
        for rec in func.instructions:
            if rec.name in ('block', 'loop', 'if'):
                open_blocks.append(rec.offset)
            elif rec.name == 'else':
                elses[open_blocks[-1]] = rec.offset
            elif rec.name == 'end':
                ends[open_blocks.pop()] = rec.offset
        costs = [self.cost_model.cost(rec.name) for rec in func.instructions]
        return _Compiled(func.index, func.instructions, func.locals, costs, ends, elses)

    def _eval_const(self, records) -> int | float:
        value = 0
        for rec in records:
            if rec.name == 'global.get':
                value = self.globals[rec.imm[0]]
            else:
                value = _const_value(rec.name, rec.imm)
        return value

    def _block_arity(self, bt: int) -> tuple[int, int]:
        if bt == -64:
            return 0, 0
        if bt < 0:
            return 0, 1
        ft = self.model.types[bt]
        return len(ft.params), len(ft.results)

    def _tick(self, func: int, pc: int, cost: float):
        self.steps += 1
        if self.steps > self.cost_model.step_budget:
            raise StepBudgetExceeded(f'step budget of {self.cost_model.step_budget} exceeded')
        if self.cost_model.loop_amplification:
            self.pseudo_time += cost
        elif (func, pc) not in self._seen:
            self._seen.add((func, pc))
            self.pseudo_time += cost

    def _address(self, base: int, offset: int, width: int) -> int:
        ea = base + offset
        if ea + width > len(self.memory):
            raise Trap('out of bounds memory access')
        return ea

    def _load(self, name: str, imm: tuple, base: int):
        width, signed, t = _ACCESS[name]
        ea = self._address(base, imm[1], width)
        raw = bytes(self.memory[ea:ea + width])
        if t == 'f32':
            return struct.unpack('<f', raw)[0]
        if t == 'f64':
            return struct.unpack('<d', raw)[0]
        value = int.from_bytes(raw, 'little')
        if signed:
            value = _signed(value, width * 8)
        return value & (M32 if t == 'i32' else M64)

    def _store(self, name: str, imm: tuple, base: int, value):
        width, _, t = _ACCESS[name]
        ea = self._address(base, imm[1], width)
        if t == 'f32':
            raw = struct.pack('<f', value)
        elif t == 'f64':
            raw = struct.pack('<d', value)
        else:
            raw = (value & ((1 << (8 * width)) - 1)).to_bytes(width, 'little')
        self.memory[ea:ea + width] = raw

    @staticmethod
    def _branch(stack: list, labels: list[_Label], depth: int) -> int | None:
        if depth >= len(labels):
            return None
        label = labels[-1 - depth]
        values = stack[len(stack) - label.arity:] if label.arity else []
        del stack[label.height:]
        stack.extend(values)
        if label.loop:
            del labels[len(labels) - depth:]
            return label.start + 1
        del labels[len(labels) - 1 - depth:]
        return label.end + 1

    def call(self, index: int, args: list, depth: int = 0) -> list:
        if depth > MAX_CALL_DEPTH:
            raise Trap('call stack exhausted')
        fn = self.compiled[index]
        locals_ = list(args) + [ZERO.get(t, 0) for t in fn.locals[len(args):]]
        stack: list = []
        labels: list[_Label] = []
        code = fn.records
        pc = 0

        while pc < len(code):
            rec = code[pc]
            name = rec.name
            self._tick(index, pc, fn.costs[pc])

            handler = NUMERIC.get(name)
            if handler is not None:
                if len(rec.signature.params) == 1:
                    stack[-1] = handler(stack[-1])
                else:
                    b = stack.pop()
                    stack[-1] = handler(stack[-1], b)
                pc += 1
                continue

            target = pc + 1
            if name.endswith('.const'):
                stack.append(_const_value(name, rec.imm))
            elif name == 'local.get':
                stack.append(locals_[rec.imm[0]])
            elif name == 'local.set':
                locals_[rec.imm[0]] = stack.pop()
            elif name == 'local.tee':
                locals_[rec.imm[0]] = stack[-1]
            elif name == 'global.get':
                stack.append(self.globals[rec.imm[0]])
            elif name == 'global.set':
                self.globals[rec.imm[0]] = stack.pop()
            elif name in _ACCESS:
                if BY_NAME[name].is_load:
                    stack.append(self._load(name, rec.imm, stack.pop()))
                else:
                    value = stack.pop()
                    self._store(name, rec.imm, stack.pop(), value)
            elif name in ('block', 'loop', 'if'):
                if name == 'if' and not stack.pop():
                    target = fn.elses[pc] + 1 if pc in fn.elses else fn.ends[pc]
                params, results = self._block_arity(rec.imm[0])
                loop = name == 'loop'
                labels.append(_Label(loop, len(stack) - params, params if loop else results, pc, fn.ends[pc]))
            elif name == 'else':
                target = labels[-1].end
            elif name == 'end':
                labels.pop()
            elif name in ('br', 'br_if', 'br_table'):
                if name == 'br':
                    depth_l = rec.imm[0]
                elif name == 'br_if':
                    depth_l = rec.imm[0] if stack.pop() else None
                else:
                    i = stack.pop()
                    table, default = rec.imm
                    depth_l = table[i] if i < len(table) else default
                if depth_l is not None:
                    target = self._branch(stack, labels, depth_l)
                    if target is None:
                        break
            elif name == 'return':
                break
            elif name == 'call':
                callee = rec.imm[0]
                n = len(self.model.func_type(callee).params)
                args_ = stack[len(stack) - n:] if n else []
                del stack[len(stack) - n:]
                stack.extend(self.call(callee, args_, depth + 1))
            elif name == 'drop':
                stack.pop()
            elif name in ('select', 'select_t'):
                c = stack.pop()
                b = stack.pop()
                stack[-1] = stack[-1] if c else b
            elif name == 'nop':
                pass
            elif name == 'unreachable':
                raise Trap('unreachable executed')
            elif name == 'memory.size':
                stack.append(len(self.memory) // PAGE)
            elif name == 'memory.grow':
                delta = stack.pop()
                pages = len(self.memory) // PAGE
                if pages + delta > self.max_pages:
                    stack.append(M32)
                else:
                    self.memory.extend(bytes(delta * PAGE))
                    stack.append(pages)
            else:
                raise UnsupportedModule(f'instruction {name} is not supported by the mock runtime')
            pc = target

        n = len(self.model.func_type(index).results)
        return stack[len(stack) - n:] if n else []

    def run(self, entry: str = 'main') -> list:
        if self.model.start is not None:
            self.call(self.model.start, [])
        index = self.model.export(entry)
        if index is None:
            raise UnsupportedModule(f'no exported function {entry!r}')
        if self.model.func_type(index).params:
            raise UnsupportedModule(f'entry {entry!r} takes parameters')
        return self.call(index, [])


def _render(model: InstructionModel, entry: str, results: list) -> str:
    types = model.func_type(model.export(entry)).results
    return ''.join(format_value(t, v) + '\n' for t, v in zip(types, results))


def format_pseudo_time(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def interpret_with_cost(module_path: Path, cost_model: CostModel,
                        entry: str = 'main') -> tuple[ExecutionOutcome, float]:
    """Run the entry export; raises Trap or StepBudgetExceeded."""
    model = parse_module(load_module_bytes(module_path))
    machine = Machine(model, cost_model)
    results = machine.run(entry)
    stdout = _render(model, entry, results)
    outcome = ExecutionOutcome(
        exit_status=0,
        stdout_digest=hashlib.sha256(stdout.encode()).hexdigest(),
        timing=TimingSample((machine.pseudo_time,), clock='pseudo'),
    )
    return outcome, machine.pseudo_time


# =============================================================================
# Pseudo machine code
# =============================================================================

def _stem(name: str) -> str:
    return name.rpartition('.')[2].split('_')[0]


def mock_dump(module_path: Path, cost_model: CostModel) -> Disassembly:
    """Deterministic pseudo disassembly, one entry per Wasm instruction."""
    model = parse_module(load_module_bytes(module_path))
    functions = []
    address = 0
    for func in model.functions:
        if func.raw is not None:
            raise UnsupportedModule(f'function {func.index} uses unsupported instructions')
        start = address
        insns = []
        for rec in func.instructions:
            encoding = encode_instruction(rec.name, rec.imm)
            expansion = cost_model.expansion(rec.name)
            if expansion > 1:
                for _ in range(expansion):
                    insns.append(MachineInstr(address, encoding, f'{_stem(rec.name)}_expand'))
                    address += 1
            else:
                _, _, operands = rec.text().partition(' ')
                insns.append(MachineInstr(address, encoding, rec.name, operands))
                address += 1
        functions.append(DisassembledFunction(func.index, f'function[{func.index}]', start, tuple(insns)))
    return Disassembly(tuple(functions))


def run_mock(module_path: Path, cost_model_path: Path | None = None,
             entry: str = 'main', dump: bool = False) -> int:
    """`mock-run` command body; returns the process exit status."""
    try:
        cost_model = load_cost_model(cost_model_path)
        if dump:
            sys.stdout.write(serialize_disassembly(mock_dump(module_path, cost_model)))
            return 0
        model = parse_module(load_module_bytes(module_path))
        machine = Machine(model, cost_model)
        results = machine.run(entry)
    except Trap as exc:
        print(f'wasm trap: {exc}', file=sys.stderr)
        return TRAP_EXIT
    except StepBudgetExceeded as exc:
        print(f'step budget exceeded: {exc}', file=sys.stderr)
        return TIMEOUT_EXIT
    except (UnsupportedModule, ConfigError, MalformedBinary) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return 1
    sys.stdout.write(_render(model, entry, results))
    sys.stdout.write(f'{PSEUDO_TIME_MARKER}{format_pseudo_time(machine.pseudo_time)}\n')
    return 0
