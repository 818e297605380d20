"""
Report rendering for warp-lens.

One output directory per run:

    report.html           side-by-side view, original (red) vs mutant (green)
    report.txt            the same content as plain text, deterministic
    summary.jsonl         one record per candidate
    scores.csv            full score table, disqualified mutants included
    metadata.json         runtime specs, weights and timestamps
    dumps/original.dis    raw buggy-runtime dumps (normalized form)
    dumps/mutant_<n>.dis
    mutants/manifest.jsonl
"""
import html
import json
from dataclasses import dataclass, field
from pathlib import Path

from .console import COLORS
from .disasm import Disassembly, serialize_disassembly
from .errors import OutputUnwritable
from .machdiff import EditKind, FunctionDiff, diff_totals
from .scoring import Disqualified, MutantScore, score_table
from .wasm import FunctionBody

TEMPLATE = Path(__file__).parent / 'templates' / 'report.html.tmpl'
EXCERPT_CONTEXT = 3


@dataclass(frozen=True)
class ExcerptLine:
    number: int                  # function-relative instruction index
    text: str
    marked: bool = False


@dataclass(frozen=True)
class Candidate:
    rank: int
    score: MutantScore
    site: dict                   # manifest record of the mutant
    original_excerpt: tuple[ExcerptLine, ...]
    mutant_excerpt: tuple[ExcerptLine, ...]
    diffs: tuple[FunctionDiff, ...]

    @property
    def ordinal(self) -> int:
        return self.score.ordinal

    def summary(self) -> dict:
        totals = diff_totals(list(self.diffs))
        span = self.site.get('span', [0, 0])
        return {
            'rank': self.rank,
            'ordinal': self.ordinal,
            'rule': self.score.rule,
            'function': self.site.get('function'),
            'offset': self.site.get('offset'),
            'original': self.site.get('original'),
            'mutated': self.site.get('mutated'),
            'perf_diff_ratio': round(self.score.perf_diff_ratio, 6),
            'func_sim_ratio': round(self.score.func_sim_ratio, 6),
            'perf_diff_score': round(self.score.perf_diff_score, 6),
            'func_sim_score': round(self.score.func_sim_score, 6),
            'total': round(self.score.total, 6),
            'wasm_touched': span[1] - span[0],
            'machine_identified': totals['identified'],
            'machine_inserted': totals['inserted'],
            'bytes_differ': totals['bytes_differ'],
            'address_shifted': totals['address_shifted'],
            'functions': [d.to_dict() for d in self.diffs if d.changed],
        }


@dataclass(frozen=True)
class ReportBundle:
    input: str
    metadata: dict
    candidates: tuple[Candidate, ...] = ()
    ranked: tuple[MutantScore, ...] = ()
    rejected: tuple[Disqualified, ...] = ()
    original_dump: Disassembly | None = None
    mutant_dumps: dict[int, Disassembly] = field(default_factory=dict)
    manifest: tuple[dict, ...] = ()
    message: str = ''
    timestamps: dict = field(default_factory=dict)


def excerpt(func: FunctionBody, span: tuple[int, int], context: int = EXCERPT_CONTEXT) -> tuple[ExcerptLine, ...]:
    """Instructions around [start, stop), the span itself marked."""
    start, stop = span
    records = func.instructions
    lo = max(0, start - context)
    hi = min(len(records), max(stop, start) + context)
    return tuple(ExcerptLine(i, records[i].text(), start <= i < stop) for i in range(lo, hi))


# =============================================================================
# Template helpers
# =============================================================================

def render_template(template: str, values: dict[str, str]) -> str:
    """
    Render a template string, replacing {{key}} placeholders.

    Double braces avoid conflicts with CSS single braces.
    """
    result = template
    for key, value in values.items():
        result = result.replace(f'{{{{{key}}}}}', value)
    return result


def generate_css_vars(colors: dict[str, str], indent: str = '  ') -> str:
    lines = []
    for slot in sorted(colors.keys(), key=lambda s: (len(s), s)):
        lines.append(f'{indent}--{slot}: {colors[slot]};')
    return '\n'.join(lines)


# =============================================================================
# Plain text
# =============================================================================

def region_lines(d: FunctionDiff) -> list[str]:
    lines = []
    ops = d.script.operations
    for n, region in enumerate(d.regions, 1):
        lines.append(f'      region {n} (ops {region.start}..{region.stop - 1})')
        for op in ops[region.context_start:region.context_stop]:
            if op.kind is EditKind.KEEP:
                lines.append(f'          {op.orig_addr:#08x}  {op.mnemonic}')
            elif op.kind is EditKind.DELETE:
                lines.append(f'        - {op.orig_addr:#08x}  {op.mnemonic}')
            else:
                lines.append(f'        + {op.mut_addr:#08x}  {op.mnemonic}')
    return lines


def function_line(d: FunctionDiff) -> str:
    def start(a):
        return '-' if a is None else f'{a:#x}'

    flags = []
    if d.bytes_differ:
        flags.append('bytes-differ')
    if d.address_delta:
        flags.append(f'start moved {d.address_delta:+d}')
    suffix = f'  [{", ".join(flags)}]' if flags else ''
    return (f'    function {d.function}: #MI {d.original_count} -> {d.mutant_count}, '
            f'identified {d.identified}, inserted {d.script.inserts}, '
            f'start {start(d.original_start)} -> {start(d.mutant_start)}{suffix}')


def _reasons(rejected) -> list[tuple[str, int]]:
    counts: dict[str, int] = {}
    for d in rejected:
        counts[d.reason] = counts.get(d.reason, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def render_text(bundle: ReportBundle) -> str:
    out = ['warp-lens report', '================', '', f'input: {bundle.input}',
           f'qualified: {len(bundle.ranked)}  disqualified: {len(bundle.rejected)}', '']

    if not bundle.candidates:
        out.append(bundle.message or 'No candidate found.')
        for reason, n in _reasons(bundle.rejected):
            out.append(f'  {n:>6}  {reason}')
        out.append('')

    for c in bundle.candidates:
        s = c.score
        out.append(f'#{c.rank}  mutant {c.ordinal}  {s.rule}  function {c.site.get("function")} '
                   f'offset {c.site.get("offset")}')
        out.append(f'    Ratio(B) {s.perf_diff_ratio:.2f}  Ratio(O) {s.func_sim_ratio:.2f}  '
                   f'perf {s.perf_diff_score:.4f}  sim {s.func_sim_score:.4f}  total {s.total:.4f}'
                   + ('  (unstable)' if s.unstable else ''))
        out.append(f'    wasm: {c.site.get("original")}  =>  {c.site.get("mutated")}')
        out.append('    original:')
        out += [f'      {"-" if ln.marked else " "} {ln.number:>4}  {ln.text}' for ln in c.original_excerpt]
        out.append('    mutant:')
        out += [f'      {"+" if ln.marked else " "} {ln.number:>4}  {ln.text}' for ln in c.mutant_excerpt]
        out.append('  machine code:')
        changed = [d for d in c.diffs if d.changed]
        if not changed:
            out.append('    identical machine code')
        for d in changed:
            out.append(function_line(d))
            if not d.regions:
                out.append('      no opcode difference')
            out += region_lines(d)
        out.append('')
    return '\n'.join(out) + '\n'


# =============================================================================
# HTML
# =============================================================================

def _e(text) -> str:
    return html.escape(str(text))


def _excerpt_html(lines: tuple[ExcerptLine, ...], cls: str) -> str:
    rows = []
    for ln in lines:
        attr = f' class="{cls}"' if ln.marked else ''
        rows.append(f'<tr><td class="muted">{ln.number}</td><td{attr}>{_e(ln.text)}</td></tr>')
    return '<table>' + ''.join(rows) + '</table>'


def _diff_html(d: FunctionDiff) -> str:
    rows = []
    ops = d.script.operations
    for region in d.regions:
        rows.append('<tr class="gap"><td></td><td></td></tr>')
        for op in ops[region.context_start:region.context_stop]:
            if op.kind is EditKind.KEEP:
                left = f'{op.orig_addr:#08x}  {_e(op.mnemonic)}'
                right = f'{op.mut_addr:#08x}  {_e(op.mnemonic)}'
                rows.append(f'<tr><td>{left}</td><td>{right}</td></tr>')
            elif op.kind is EditKind.DELETE:
                rows.append(f'<tr><td class="del">{op.orig_addr:#08x}  {_e(op.mnemonic)}</td><td></td></tr>')
            else:
                rows.append(f'<tr><td></td><td class="ins">{op.mut_addr:#08x}  {_e(op.mnemonic)}</td></tr>')
    title = _e(function_line(d).strip())
    body = ('<table class="pair"><tr><th class="side">original</th><th class="side">mutant</th></tr>'
            + ''.join(rows) + '</table>') if rows else '<p class="flag">no opcode difference</p>'
    return f'<h3>{title}</h3>{body}'


def _candidate_html(c: Candidate) -> str:
    s = c.score
    parts = [
        f'<section class="candidate"><h2>#{c.rank} &middot; mutant {c.ordinal} &middot; {_e(s.rule)}</h2>',
        f'<p>Ratio(B) {s.perf_diff_ratio:.2f} &middot; Ratio(O) {s.func_sim_ratio:.2f} &middot; '
        f'score {s.total:.4f}</p>',
        '<table class="pair"><tr><th class="side">original</th><th class="side">mutant</th></tr><tr>',
        f'<td>{_excerpt_html(c.original_excerpt, "del")}</td>',
        f'<td>{_excerpt_html(c.mutant_excerpt, "ins")}</td></tr></table>',
    ]
    changed = [d for d in c.diffs if d.changed]
    if not changed:
        parts.append('<p class="muted">identical machine code</p>')
    parts += [_diff_html(d) for d in changed]
    parts.append('</section>')
    return '\n'.join(parts)


def render_html(bundle: ReportBundle) -> str:
    if bundle.candidates:
        summary = f'<p>{len(bundle.ranked)} qualified, {len(bundle.rejected)} disqualified</p>'
    else:
        items = ''.join(f'<li>{n} &times; {_e(reason)}</li>' for reason, n in _reasons(bundle.rejected))
        summary = f'<p class="flag">{_e(bundle.message or "No candidate found.")}</p><ul>{items}</ul>'

    header = ''.join(f'<th>{_e(c)}</th>' for c in ('rank', 'mutant', 'rule', 'Ratio(B)', 'Ratio(O)', 'total'))
    rows = ''.join(
        f'<tr><td>{rank}</td><td>{s.ordinal}</td><td>{_e(s.rule)}</td><td>{s.perf_diff_ratio:.2f}</td>'
        f'<td>{s.func_sim_ratio:.2f}</td><td>{s.total:.4f}</td></tr>'
        for rank, s in enumerate(bundle.ranked, 1)
    )
    meta = bundle.metadata
    return render_template(TEMPLATE.read_text(), {
        'css_vars': generate_css_vars(COLORS),
        'input': _e(bundle.input),
        'buggy': _e(meta.get('buggy', {}).get('name', '')),
        'oracle': _e(meta.get('oracle', {}).get('name', '')),
        'weights': _e(f'alpha={meta.get("alpha")} beta={meta.get("beta")} mode={meta.get("score_mode")}'),
        'summary': summary,
        'candidates': '\n'.join(_candidate_html(c) for c in bundle.candidates),
        'scores': f'<table><tr>{header}</tr>{rows}</table>',
    })


# =============================================================================
# Output directory
# =============================================================================

def render_report(bundle: ReportBundle, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    files: dict[str, str] = {
        'report.txt': render_text(bundle),
        'report.html': render_html(bundle),
        'scores.csv': score_table(list(bundle.ranked), list(bundle.rejected)),
        'metadata.json': json.dumps({**bundle.metadata, 'timestamps': bundle.timestamps}, indent=2, sort_keys=True) + '\n',
        'mutants/manifest.jsonl': ''.join(json.dumps(r, sort_keys=True) + '\n' for r in bundle.manifest),
    }
    if bundle.candidates:
        files['summary.jsonl'] = ''.join(json.dumps(c.summary(), sort_keys=True) + '\n' for c in bundle.candidates)
    else:
        record = {'status': 'no-candidate', 'message': bundle.message,
                  'disqualified': dict(_reasons(bundle.rejected))}
        files['summary.jsonl'] = json.dumps(record, sort_keys=True) + '\n'
    if bundle.original_dump is not None:
        files['dumps/original.dis'] = serialize_disassembly(bundle.original_dump)
    for ordinal, dump in sorted(bundle.mutant_dumps.items()):
        files[f'dumps/mutant_{ordinal}.dis'] = serialize_disassembly(dump)

    written = []
    try:
        for name, content in files.items():
            path = out_dir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content)
            written.append(path)
    except OSError as exc:
        raise OutputUnwritable(f'cannot write report to {out_dir}: {exc}') from exc
    return written
