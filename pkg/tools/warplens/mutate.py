"""
Fine-grained, type-aware mutation of Wasm function bodies.

Three rules, each touching one logical instruction:

    OperandSubst    t.const imm -> t.const imm' | local.get k | global.get k
                    local.get k / global.get k -> t.const imm
                    i32.const addr; t.load -> t.const imm
    OperatorSubst   t.op -> t.op' with an identical operator type
    OperatorDelete  (operand producers)* t.op -> (t.const 0)*   (results only)

Control instructions are never touched.
"""
import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import IllegalSpan, NoCandidates
from .opcodes import DataType
from .wasm import (
    FunctionBody, InstrCategory, InstructionModel, InstrRecord, annotate,
    const_ops, encode_module, f32_bits, f32_from_bits, f64_bits, f64_from_bits,
    instr_text, stack_effect,
    substitution_group, validate_module,
)

log = logging.getLogger(__name__)


class Rule(enum.StrEnum):
    OPERAND_SUBST = 'OperandSubst'
    OPERATOR_SUBST = 'OperatorSubst'
    OPERATOR_DELETE = 'OperatorDelete'

    @property
    def tag(self) -> str:
        return {'OperandSubst': 'rule1', 'OperatorSubst': 'rule2', 'OperatorDelete': 'rule3'}[self.value]


DEFAULT_POOL: dict[DataType, tuple] = {
    DataType.I32: (0, 1, -1, (1 << 31) - 1),
    DataType.I64: (0, 1, -1, (1 << 63) - 1),
    DataType.F32: (0.0, 1.0, -1.0),
    DataType.F64: (0.0, 1.0, -1.0),
}

DEFAULT_MUTANT_CAP = 2000

_INT_BITS = {DataType.I32: 32, DataType.I64: 64}


@dataclass(frozen=True)
class MutationConfig:
    pool: dict[DataType, tuple] = field(default_factory=lambda: dict(DEFAULT_POOL))
    cap: int = DEFAULT_MUTANT_CAP
    validate: bool = True


@dataclass(frozen=True)
class MutationSite:
    function: int
    offset: int
    rule: Rule
    span: tuple[int, int]                           # [start, stop) of rewritten records
    replacement: tuple[tuple[str, tuple], ...] | None = None

    @property
    def fused(self) -> bool:
        return self.rule is Rule.OPERAND_SUBST and self.span[1] - self.span[0] == 2


@dataclass(frozen=True)
class Mutant:
    module: bytes = field(repr=False)
    site: MutationSite
    original_text: str
    mutated_text: str
    ordinal: int = -1

    @property
    def rule(self) -> Rule:
        return self.site.rule

    @property
    def touched(self) -> int:
        """Number of original Wasm instructions the mutation rewrote."""
        start, stop = self.site.span
        return stop - start

    @property
    def filename(self) -> str:
        return f'mutant_{self.ordinal}_{self.rule.tag}.wasm'

    def manifest_record(self) -> dict:
        return {
            'ordinal': self.ordinal,
            'rule': str(self.rule),
            'function': self.site.function,
            'offset': self.site.offset,
            'span': list(self.site.span),
            'original': self.original_text,
            'mutated': self.mutated_text,
            'file': self.filename,
        }


# =============================================================================
# Sites
# =============================================================================

def deletion_span(records: tuple[InstrRecord, ...], offset: int) -> tuple[int, int] | None:
    """Span of an operator plus the operand producers feeding it, if all are operands."""
    record = records[offset]
    pos = offset
    for _ in record.signature.params:
        j = pos - 1
        if j < 0 or records[j].category is not InstrCategory.OPERAND:
            return None
        pos = j - 1 if records[j].fused else j
    return (pos, offset + 1)


def _mutable_functions(model: InstructionModel):
    for func in model.functions:
        if func.mutable and func.raw is None:
            yield func


def enumerate_mutation_sites(model: InstructionModel) -> list[MutationSite]:
    sites = []
    for func in _mutable_functions(model):
        records = func.instructions
        for record in records:
            off = record.offset
            if record.category is InstrCategory.OPERAND:
                span = (off - 1, off + 1) if record.fused else (off, off + 1)
                sites.append(MutationSite(func.index, off, Rule.OPERAND_SUBST, span))
            elif record.category is InstrCategory.OPERATOR:
                group = substitution_group(record.signature)
                if record.name in group and len(group) > 1:
                    sites.append(MutationSite(func.index, off, Rule.OPERATOR_SUBST, (off, off + 1)))
                if record.name != 'local.tee':
                    span = deletion_span(records, off)
                    if span is not None:
                        sites.append(MutationSite(func.index, off, Rule.OPERATOR_DELETE, span))
    return sites


# =============================================================================
# Rules
# =============================================================================

def _same_const(t: DataType, a, b) -> bool:
    if t is DataType.F32:
        return f32_bits(a) == f32_bits(b)
    if t is DataType.F64:
        return f64_bits(a) == f64_bits(b)
    return a == b


def _const_value(record: InstrRecord):
    if record.name == 'f32.const':
        return f32_from_bits(record.imm[0])
    if record.name == 'f64.const':
        return f64_from_bits(record.imm[0])
    return record.imm[0]


def _representable(t: DataType, value) -> bool:
    bits = _INT_BITS.get(t)
    if bits is None:
        return True
    return -(1 << (bits - 1)) <= value < 1 << (bits - 1)


def pool_constants(t: DataType, pool: dict[DataType, tuple], exclude=None) -> list:
    """Pool constants of type t, minus exclude, plus its sign flip."""
    values = []
    candidates = list(pool.get(t, ()))
    if exclude is not None:
        candidates.append(-exclude)
    for value in candidates:
        if not _representable(t, value):
            continue
        if exclude is not None and _same_const(t, value, exclude):
            continue
        if any(_same_const(t, value, v) for v in values):
            continue
        values.append(value)
    return values


def _build(model: InstructionModel, func: FunctionBody, site: MutationSite,
           replacement: list[tuple[str, tuple]]) -> Mutant:
    start, stop = site.span
    ops = [(r.name, r.imm) for r in func.instructions]
    ops[start:stop] = replacement
    mutated = model.with_body(func.index, ops)
    original_text = '; '.join(r.text() for r in func.instructions[start:stop])
    mutated_text = '; '.join(instr_text(name, imm) for name, imm in replacement) or '(deleted)'
    return Mutant(
        module=encode_module(mutated),
        site=replace(site, replacement=tuple(replacement)),
        original_text=original_text,
        mutated_text=mutated_text,
    )


def apply_rule1(model: InstructionModel, site: MutationSite,
                pool: dict[DataType, tuple] = DEFAULT_POOL) -> list[Mutant]:
    """Operand instruction substitution."""
    func = model.function(site.function)
    record = func.instructions[site.offset]
    t = record.result
    if record.category is not InstrCategory.OPERAND or t is None:
        raise NoCandidates(f'{record.text()} is not an operand instruction')

    candidates: list[list[tuple[str, tuple]]] = []
    if record.name.endswith('.const') and not site.fused:
        for value in pool_constants(t, pool, exclude=_const_value(record)):
            candidates.append([const_ops(t, value)])
        for k, local_type in enumerate(func.locals):
            if local_type == t:
                candidates.append([('local.get', (k,))])
        for k, global_type in enumerate(model.global_types):
            if global_type == t:
                candidates.append([('global.get', (k,))])
    else:
        for value in pool_constants(t, pool):
            candidates.append([const_ops(t, value)])

    if not candidates:
        raise NoCandidates(f'no replacement for {record.text()}')
    return [_build(model, func, site, replacement) for replacement in candidates]


def apply_rule2(model: InstructionModel, site: MutationSite) -> list[Mutant]:
    """Operator instruction substitution within the operator-type group."""
    func = model.function(site.function)
    record = func.instructions[site.offset]
    group = substitution_group(record.signature) if record.signature else []
    if record.name not in group:
        return []
    return [_build(model, func, site, [(name, ())]) for name in group if name != record.name]


def apply_rule3(model: InstructionModel, site: MutationSite) -> Mutant:
    """Operator instruction deletion, restoring results with zero constants."""
    func = model.function(site.function)
    records = func.instructions
    record = records[site.offset]
    if record.category is not InstrCategory.OPERATOR or record.name == 'local.tee':
        raise IllegalSpan(f'{record.text()} cannot be deleted')
    span = deletion_span(records, site.offset)
    if span is None or span != site.span:
        raise IllegalSpan(f'operand of {record.text()} at {site.offset} is produced by an operator')

    replacement = [const_ops(t, 0) for t in record.signature.results]
    removed = records[span[0]:span[1]]
    inserted = annotate(replacement, func.locals, model.global_types)
    if stack_effect(removed) != stack_effect(inserted):
        raise IllegalSpan(f'stack effect mismatch deleting {record.text()}')
    return _build(model, func, site, replacement)


def apply_site(model: InstructionModel, site: MutationSite, config: MutationConfig) -> list[Mutant]:
    if site.rule is Rule.OPERAND_SUBST:
        return apply_rule1(model, site, config.pool)
    if site.rule is Rule.OPERATOR_SUBST:
        return apply_rule2(model, site)
    return [apply_rule3(model, site)]


def generate_all_mutants(model: InstructionModel, config: MutationConfig | None = None) -> list[Mutant]:
    """Every valid single-site mutant, deduplicated by module bytes, in site order."""
    config = config or MutationConfig()
    original = encode_module(model)
    seen = {original}
    mutants: list[Mutant] = []
    rejected = 0

    for site in enumerate_mutation_sites(model):
        try:
            produced = apply_site(model, site, config)
        except NoCandidates as exc:
            log.debug('skipping site %s: %s', site, exc)
            continue
        for mutant in produced:
            if mutant.module in seen:
                continue
            seen.add(mutant.module)
            if config.validate:
                verdict = validate_module(mutant.module)
                if not verdict:
                    rejected += 1
                    log.warning('mutant at func %d offset %d rejected by validator: %s',
                                site.function, site.offset, verdict.rule)
                    continue
            mutants.append(replace(mutant, ordinal=len(mutants)))
            if len(mutants) >= config.cap:
                log.info('mutant cap %d reached; truncating', config.cap)
                return mutants

    log.info('generated %d mutants (%d rejected)', len(mutants), rejected)
    return mutants


# =============================================================================
# Persistence
# =============================================================================

MANIFEST = 'manifest.jsonl'


def write_mutants(mutants: list[Mutant], directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for mutant in mutants:
        (directory / mutant.filename).write_bytes(mutant.module)
        lines.append(json.dumps(mutant.manifest_record(), sort_keys=True))
    manifest = directory / MANIFEST
    manifest.write_text(''.join(line + '\n' for line in lines))
    return manifest


def read_manifest(directory: Path) -> list[dict]:
    path = Path(directory) / MANIFEST
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
