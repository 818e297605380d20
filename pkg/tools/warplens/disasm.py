"""
Disassembly model and dump-adapter output parsing.

Adapters print either columnar disassembler text

    0000000000000000 <wasm[0]::function[1]>:
       0:	55                   	push   %rbp
       1:	48 89 e5             	mov    %rsp,%rbp

or the normalized serialized form: one JSON object per line, a `function`
header record followed by its `insn` records.
"""
import json
import logging
import re
from dataclasses import dataclass

from .errors import DumpParseError

log = logging.getLogger(__name__)

DEFAULT_SYMBOL_PATTERN = r'(?:wasm-function\[|function\[|func_?)(\d+)'


@dataclass(frozen=True)
class MachineInstr:
    address: int
    encoding: bytes
    mnemonic: str
    operands: str = ''


@dataclass(frozen=True)
class DisassembledFunction:
    index: int
    symbol: str
    start: int
    instructions: tuple[MachineInstr, ...]


@dataclass(frozen=True)
class Disassembly:
    functions: tuple[DisassembledFunction, ...]

    def by_index(self) -> dict[int, DisassembledFunction]:
        return {f.index: f for f in self.functions}

    def addresses(self) -> set[int]:
        return {i.address for f in self.functions for i in f.instructions}


def check_disassembly(dis: Disassembly) -> Disassembly:
    for func in dis.functions:
        addresses = [i.address for i in func.instructions]
        if any(b <= a for a, b in zip(addresses, addresses[1:])):
            raise DumpParseError(f'function {func.index}: addresses not strictly increasing')
        if addresses and func.start != addresses[0]:
            raise DumpParseError(f'function {func.index}: start {func.start:#x} is not the first address')
    return dis


# =============================================================================
# Normalized form
# =============================================================================

def serialize_disassembly(dis: Disassembly) -> str:
    lines = []
    for func in dis.functions:
        lines.append(json.dumps({
            'kind': 'function', 'func': func.index, 'symbol': func.symbol, 'start': hex(func.start),
        }))
        for insn in func.instructions:
            lines.append(json.dumps({
                'kind': 'insn',
                'func': func.index,
                'addr': hex(insn.address),
                'bytes': insn.encoding.hex(),
                'mnemonic': insn.mnemonic,
                'operands': insn.operands,
            }))
    return ''.join(line + '\n' for line in lines)


def parse_normalized(text: str) -> Disassembly:
    headers: dict[int, tuple[str, int]] = {}
    order: list[int] = []
    insns: dict[int, list[MachineInstr]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            index = int(rec['func'])
            if rec.get('kind') == 'function':
                headers[index] = (rec.get('symbol', ''), int(rec['start'], 16))
                if index not in insns:
                    order.append(index)
                    insns[index] = []
                continue
            insn = MachineInstr(int(rec['addr'], 16), bytes.fromhex(rec.get('bytes', '')),
                                rec['mnemonic'], rec.get('operands', ''))
        except (ValueError, KeyError, TypeError) as exc:
            raise DumpParseError(f'line {lineno}: {exc}') from exc
        if index not in insns:
            order.append(index)
            insns[index] = []
        insns[index].append(insn)

    functions = []
    for index in order:
        body = tuple(insns[index])
        symbol, start = headers.get(index, ('', body[0].address if body else 0))
        functions.append(DisassembledFunction(index, symbol, start, body))
    return check_disassembly(Disassembly(tuple(functions)))


# =============================================================================
# Columnar disassembler text
# =============================================================================

_HEADER_RE = re.compile(r'^(?:[0-9a-fA-F]+\s+)?<?(?P<symbol>[^\s<>][^<>]*?)>?:\s*$')
_INSN_RE = re.compile(
    r'^\s*(?P<addr>[0-9a-fA-F]+):\s+(?P<bytes>(?:[0-9a-fA-F]{2} ?)+?)\s{2,}(?P<text>\S.*)$')
_CONT_RE = re.compile(r'^\s*(?P<addr>[0-9a-fA-F]+):\s+(?P<bytes>(?:[0-9a-fA-F]{2} ?)+)\s*$')


def _split_insn(line: str):
    if '\t' in line:
        parts = line.split('\t')
        head = parts[0].strip()
        if head.endswith(':') and len(parts) >= 2:
            addr = head[:-1]
            raw = parts[1].strip()
            text = '\t'.join(parts[2:]).strip()
            return addr, raw, text
    m = _INSN_RE.match(line)
    if m:
        return m.group('addr'), m.group('bytes').strip(), m.group('text').strip()
    m = _CONT_RE.match(line)
    if m:
        return m.group('addr'), m.group('bytes').strip(), ''
    return None


def parse_columnar(text: str, symbol_pattern: str = DEFAULT_SYMBOL_PATTERN) -> Disassembly:
    symbol_re = re.compile(symbol_pattern)
    functions: list[DisassembledFunction] = []
    current: list[MachineInstr] | None = None
    symbol = ''
    index = 0
    seen_headers = 0

    def flush():
        if current is not None:
            start = current[0].address if current else 0
            functions.append(DisassembledFunction(index, symbol, start, tuple(current)))

    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith(('Disassembly of', ';', '#')):
            continue
        parsed = _split_insn(line)
        if parsed is not None:
            addr, raw, insn_text = parsed
            try:
                address = int(addr, 16)
                encoding = bytes.fromhex(raw.replace(' ', ''))
            except ValueError:
                parsed = None
            else:
                if current is None:
                    current = []
                if not insn_text:
                    if current:
                        prev = current[-1]
                        current[-1] = MachineInstr(prev.address, prev.encoding + encoding,
                                                   prev.mnemonic, prev.operands)
                    continue
                mnemonic, _, operands = insn_text.partition(' ')
                current.append(MachineInstr(address, encoding, mnemonic, operands.strip()))
                continue
        header = _HEADER_RE.match(line.strip())
        if header:
            flush()
            symbol = header.group('symbol')
            m = symbol_re.search(symbol)
            if m:
                index = int(m.group(1))
            else:
                index = seen_headers
                log.warning('symbol %r has no function index; using ordinal %d', symbol, index)
            seen_headers += 1
            current = []

    flush()
    if not functions:
        raise DumpParseError('no functions or instructions recognised in dump output')
    return check_disassembly(Disassembly(tuple(functions)))


def parse_dump(text: str, symbol_pattern: str = DEFAULT_SYMBOL_PATTERN) -> Disassembly:
    """Parse adapter output, detecting the normalized form by its first record."""
    for line in text.splitlines():
        if line.strip():
            if line.lstrip().startswith('{'):
                return parse_normalized(text)
            break
    return parse_columnar(text, symbol_pattern)
