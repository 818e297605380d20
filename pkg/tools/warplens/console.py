"""
Terminal output for the warp-lens CLI: truecolor helpers, headers and the
ranking / diff tables.
"""
import sys

from .machdiff import FunctionDiff
from .scoring import Disqualified, MutantScore

# Slots used for terminal and HTML output
COLORS = {
    'base00': '#1a1c22',    # bg
    'base01': '#282b31',    # bg+
    'base03': '#5a5d62',    # muted
    'base05': '#dbd6cc',    # fg
    'base08': '#e7349c',    # deletions, original side
    'base0A': '#f2a633',    # caution
    'base0B': '#04b372',    # insertions, mutant side
    'base0D': '#458ae2',    # links, focus
}

USE_COLOR = sys.stdout.isatty() and "--no-color" not in sys.argv


def set_color(enabled: bool):
    global USE_COLOR
    USE_COLOR = enabled


def hex_to_rgb(hex_color: str) -> tuple[int, int, int]:
    h = hex_color.strip().lstrip("#")
    return int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16)


def rgb_fg(hex_color: str) -> str:
    """True color foreground"""
    if not USE_COLOR:
        return ""
    r, g, b = hex_to_rgb(hex_color)
    return f"\033[38;2;{r};{g};{b}m"


def reset() -> str:
    return "\033[0m" if USE_COLOR else ""


def bold() -> str:
    return "\033[1m" if USE_COLOR else ""


def dim() -> str:
    return "\033[2m" if USE_COLOR else ""


def print_header(title: str):
    width = 78
    print()
    print(f"{'═' * width}")
    print(f"  {bold()}{title}{reset()}")
    print(f"{'═' * width}")


def print_subheader(title: str):
    print()
    print(f"  {bold()}── {title} ──{reset()}")
    print()


def done(artifact: str):
    print(f"  {rgb_fg(COLORS['base0B'])}✓{reset()} {artifact}")


def score_bar(value: float, width: int = 20) -> str:
    """Bar for a score in [0, 1]"""
    filled = int(round(value * width))
    return f"{dim()}{'█' * filled}{'░' * (width - filled)}{reset()}"


def print_ranking(ranked: list[MutantScore], labels: dict[int, str], limit: int = 10):
    print_subheader("Ranking")
    print(f"  {'#':>3} {'Mutant':>6} {'Rule':<14} {'Ratio(B)':>9} {'Ratio(O)':>9} {'Score':>7}  {'':<20} Site")
    print(f"  {'─'*3} {'─'*6} {'─'*14} {'─'*9} {'─'*9} {'─'*7}  {'─'*20} {'─'*24}")
    for rank, s in enumerate(ranked[:limit], 1):
        flag = f" {rgb_fg(COLORS['base0A'])}unstable{reset()}" if s.unstable else ""
        print(f"  {rank:>3} {s.ordinal:>6} {s.rule:<14} {s.perf_diff_ratio:>9.2f} {s.func_sim_ratio:>9.2f} "
              f"{s.total:>7.4f}  {score_bar(s.total)} {labels.get(s.ordinal, '')}{flag}")
    if len(ranked) > limit:
        print(f"  {dim()}... {len(ranked) - limit} more in scores.csv{reset()}")


def print_disqualified(rejected: list[Disqualified]):
    if not rejected:
        return
    counts: dict[str, int] = {}
    for d in rejected:
        counts[d.reason] = counts.get(d.reason, 0) + 1
    print_subheader("Disqualified")
    for reason, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        print(f"  {n:>6}  {reason}")


def print_function_diffs(diffs: list[FunctionDiff]):
    red, green = rgb_fg(COLORS['base08']), rgb_fg(COLORS['base0B'])
    print(f"  {'Func':>4} {'#MI(orig)':>10} {'#MI(mut)':>9} {'Identified':>10} {'Inserted':>9} {'ΔStart':>8}  Flags")
    print(f"  {'─'*4} {'─'*10} {'─'*9} {'─'*10} {'─'*9} {'─'*8}  {'─'*14}")
    for d in diffs:
        if not d.changed:
            continue
        flags = []
        if d.bytes_differ:
            flags.append("bytes-differ")
        if d.address_delta:
            flags.append("start-moved")
        print(f"  {d.function:>4} {d.original_count:>10} {d.mutant_count:>9} "
              f"{red}{d.identified:>10}{reset()} {green}{d.script.inserts:>9}{reset()} "
              f"{d.address_delta:>+8}  {' '.join(flags)}")
