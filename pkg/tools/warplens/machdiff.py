"""
Opcode-level machine-code diff between the original and a mutant.

Functions are paired by module function index. Within a pair only
mnemonics are compared (registers, immediates and memory operands are
dropped), using a longest-common-subsequence edit script. Differences the
opcode view cannot show are flagged separately: shifted start addresses
and differing encodings under Keep operations.
"""
import enum
import logging
from dataclasses import dataclass

from .disasm import DisassembledFunction, Disassembly
from .errors import UnpairableFunctions

log = logging.getLogger(__name__)

CONTEXT = 3
# Above these sizes the quadratic table is replaced by the linear-space split.
TABLE_MAX_LENGTH = 10_000
TABLE_MAX_CELLS = 10_000_000


class EditKind(enum.StrEnum):
    KEEP = 'Keep'
    DELETE = 'DeleteFromOriginal'
    INSERT = 'InsertFromMutant'


@dataclass(frozen=True)
class OpcodeSequence:
    function: int
    mnemonics: tuple[str, ...]
    addresses: tuple[int, ...]
    encodings: tuple[bytes, ...] = ()
    start: int = 0

    def __len__(self) -> int:
        return len(self.mnemonics)


@dataclass(frozen=True)
class EditOp:
    kind: EditKind
    mnemonic: str
    orig_addr: int | None = None
    mut_addr: int | None = None


@dataclass(frozen=True)
class EditScript:
    operations: tuple[EditOp, ...]
    lcs_length: int

    def count(self, kind: EditKind) -> int:
        return sum(1 for op in self.operations if op.kind is kind)

    @property
    def deletes(self) -> int:
        return self.count(EditKind.DELETE)

    @property
    def inserts(self) -> int:
        return self.count(EditKind.INSERT)


@dataclass(frozen=True)
class DiffRegion:
    start: int              # first non-Keep operation
    stop: int               # one past the last
    context_start: int
    context_stop: int


@dataclass(frozen=True)
class FunctionDiff:
    function: int
    original_count: int
    mutant_count: int
    original_start: int | None
    mutant_start: int | None
    script: EditScript
    regions: tuple[DiffRegion, ...]
    bytes_differ: bool = False

    @property
    def identified(self) -> int:
        """Original-side machine instructions the diff isolates."""
        return self.script.deletes

    @property
    def address_delta(self) -> int:
        if self.original_start is None or self.mutant_start is None:
            return 0
        return self.mutant_start - self.original_start

    @property
    def changed(self) -> bool:
        return bool(self.regions) or self.bytes_differ or self.address_delta != 0

    def to_dict(self) -> dict:
        return {
            'function': self.function,
            'original_count': self.original_count,
            'mutant_count': self.mutant_count,
            'original_start': self.original_start,
            'mutant_start': self.mutant_start,
            'address_delta': self.address_delta,
            'lcs_length': self.script.lcs_length,
            'identified': self.identified,
            'inserted': self.script.inserts,
            'bytes_differ': self.bytes_differ,
            'regions': len(self.regions),
        }


def normalize_disassembly(dis: Disassembly) -> list[OpcodeSequence]:
    return [_sequence(func) for func in dis.functions]


def _sequence(func: DisassembledFunction) -> OpcodeSequence:
    insns = func.instructions
    return OpcodeSequence(
        function=func.index,
        mnemonics=tuple(i.mnemonic for i in insns),
        addresses=tuple(i.address for i in insns),
        encodings=tuple(i.encoding for i in insns),
        start=func.start,
    )


# =============================================================================
# LCS
# =============================================================================

def _table_kinds(x, y) -> list[EditKind]:
    """Quadratic suffix table; on ties prefer Keep, then Delete."""
    n, m = len(x), len(y)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        xi = x[i]
        for j in range(m - 1, -1, -1):
            if xi == y[j]:
                row[j] = below[j + 1] + 1
            else:
                row[j] = max(below[j], row[j + 1])
    kinds = []
    i = j = 0
    while i < n and j < m:
        if x[i] == y[j]:
            kinds.append(EditKind.KEEP)
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            kinds.append(EditKind.DELETE)
            i += 1
        else:
            kinds.append(EditKind.INSERT)
            j += 1
    kinds += [EditKind.DELETE] * (n - i)
    kinds += [EditKind.INSERT] * (m - j)
    return kinds


def _lcs_row(x, y) -> list[int]:
    prev = [0] * (len(y) + 1)
    for xi in x:
        cur = [0]
        for j, yj in enumerate(y):
            cur.append(prev[j] + 1 if xi == yj else max(prev[j + 1], cur[j]))
        prev = cur
    return prev


def _split_kinds(x, y, out: list[EditKind]):
    """Linear-space divide and conquer."""
    if not x:
        out += [EditKind.INSERT] * len(y)
        return
    if not y:
        out += [EditKind.DELETE] * len(x)
        return
    if len(x) == 1 or len(x) * len(y) <= TABLE_MAX_CELLS // 10:
        out += _table_kinds(x, y)
        return
    mid = len(x) // 2
    left = _lcs_row(x[:mid], y)
    right = _lcs_row(x[mid:][::-1], y[::-1])
    n = len(y)
    k = max(range(n + 1), key=lambda j: left[j] + right[n - j])
    _split_kinds(x[:mid], y[:k], out)
    _split_kinds(x[mid:], y[k:], out)


def lcs_kinds(x, y) -> list[EditKind]:
    x, y = list(x), list(y)
    prefix = 0
    while prefix < len(x) and prefix < len(y) and x[prefix] == y[prefix]:
        prefix += 1
    suffix = 0
    while (suffix < len(x) - prefix and suffix < len(y) - prefix
           and x[-1 - suffix] == y[-1 - suffix]):
        suffix += 1
    mx, my = x[prefix:len(x) - suffix], y[prefix:len(y) - suffix]

    if max(len(mx), len(my)) > TABLE_MAX_LENGTH or len(mx) * len(my) > TABLE_MAX_CELLS:
        middle: list[EditKind] = []
        _split_kinds(mx, my, middle)
    else:
        middle = _table_kinds(mx, my)
    return [EditKind.KEEP] * prefix + middle + [EditKind.KEEP] * suffix


def lcs_diff(a: OpcodeSequence, b: OpcodeSequence) -> EditScript:
    ops = []
    i = j = 0
    for kind in lcs_kinds(a.mnemonics, b.mnemonics):
        if kind is EditKind.KEEP:
            ops.append(EditOp(kind, a.mnemonics[i], a.addresses[i], b.addresses[j]))
            i += 1
            j += 1
        elif kind is EditKind.DELETE:
            ops.append(EditOp(kind, a.mnemonics[i], orig_addr=a.addresses[i]))
            i += 1
        else:
            ops.append(EditOp(kind, b.mnemonics[j], mut_addr=b.addresses[j]))
            j += 1
    ops = tuple(ops)
    return EditScript(ops, sum(1 for op in ops if op.kind is EditKind.KEEP))


def differing_regions(script: EditScript, context: int = CONTEXT) -> tuple[DiffRegion, ...]:
    regions = []
    ops = script.operations
    i = 0
    while i < len(ops):
        if ops[i].kind is EditKind.KEEP:
            i += 1
            continue
        start = i
        while i < len(ops) and ops[i].kind is not EditKind.KEEP:
            i += 1
        regions.append(DiffRegion(start, i, max(0, start - context), min(len(ops), i + context)))
    return tuple(regions)


def _bytes_differ(a: OpcodeSequence, b: OpcodeSequence, script: EditScript) -> bool:
    orig = dict(zip(a.addresses, a.encodings))
    mut = dict(zip(b.addresses, b.encodings))
    return any(orig.get(op.orig_addr) != mut.get(op.mut_addr)
               for op in script.operations if op.kind is EditKind.KEEP)


def _empty(index: int) -> OpcodeSequence:
    return OpcodeSequence(index, (), (), (), 0)


def diff_function(a: OpcodeSequence | None, b: OpcodeSequence | None, context: int = CONTEXT) -> FunctionDiff:
    index = (a or b).function
    script = lcs_diff(a or _empty(index), b or _empty(index))
    return FunctionDiff(
        function=index,
        original_count=len(a) if a else 0,
        mutant_count=len(b) if b else 0,
        original_start=a.start if a else None,
        mutant_start=b.start if b else None,
        script=script,
        regions=differing_regions(script, context),
        bytes_differ=bool(a and b) and _bytes_differ(a, b, script),
    )


def isolate_slow_code(original: Disassembly, mutant: Disassembly, context: int = CONTEXT) -> list[FunctionDiff]:
    """Per-function diffs, sorted by function index."""
    orig = {s.function: s for s in normalize_disassembly(original)}
    mut = {s.function: s for s in normalize_disassembly(mutant)}
    if (orig or mut) and not orig.keys() & mut.keys():
        raise UnpairableFunctions(
            f'no common function index (original {sorted(orig)}, mutant {sorted(mut)})')
    for index in sorted(orig.keys() ^ mut.keys()):
        log.warning('function %d present on one side only', index)
    return [diff_function(orig.get(i), mut.get(i), context) for i in sorted(orig.keys() | mut.keys())]


def diff_totals(diffs: list[FunctionDiff]) -> dict:
    return {
        'original_instructions': sum(d.original_count for d in diffs),
        'mutant_instructions': sum(d.mutant_count for d in diffs),
        'identified': sum(d.identified for d in diffs),
        'inserted': sum(d.script.inserts for d in diffs),
        'bytes_differ': any(d.bytes_differ for d in diffs),
        'address_shifted': any(d.address_delta for d in diffs),
    }
