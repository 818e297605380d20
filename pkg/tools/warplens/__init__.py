# warp-lens library
from .config import PipelineConfig, load_config, validate_config
from .disasm import Disassembly, parse_dump
from .errors import WarpLensError
from .harness import RuntimeSpec, measure_execution, run_with_output
from .machdiff import isolate_slow_code, lcs_diff
from .mutate import Mutant, Rule, generate_all_mutants
from .pipeline import run_pipeline
from .reduction import validate_reduction
from .scoring import ScoreMode, ScoreWeights, rank_mutants, score_mutant
from .wasm import InstructionModel, encode_module, parse_module, validate_module

__all__ = [
    'PipelineConfig',
    'load_config',
    'validate_config',
    'Disassembly',
    'parse_dump',
    'WarpLensError',
    'RuntimeSpec',
    'measure_execution',
    'run_with_output',
    'isolate_slow_code',
    'lcs_diff',
    'Mutant',
    'Rule',
    'generate_all_mutants',
    'run_pipeline',
    'validate_reduction',
    'ScoreMode',
    'ScoreWeights',
    'rank_mutants',
    'score_mutant',
    'InstructionModel',
    'encode_module',
    'parse_module',
    'validate_module',
]
