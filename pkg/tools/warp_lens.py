#!/usr/bin/env python3
"""
warp-lens

Isolates slow JIT code in WebAssembly runtimes: mutates the input program,
times every mutant on a buggy and an oracle runtime, ranks the mutants and
diffs the machine code of the best ones.

Usage: python3 tools/warp_lens.py run --config warp-lens.toml
       python3 tools/warp_lens.py mock-run --cost-model cost.toml bench.wasm
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from warplens.cli import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
