"""Sizing agent: decomposition, prompting, proposers and the optimisation loop."""

from .loop import (
    AnalyticEvaluator,
    Evaluation,
    SimulationEvaluator,
    apply_proposal,
    classify_circuit,
    decompose,
    run_sizing_loop,
    write_report,
)
from .prompt import COT_STEPS, build_cot_prompt
from .proposers import (
    BACKENDS,
    GeminiProposer,
    NullProposer,
    OpenAICompatibleProposer,
    Proposer,
    RandomProposer,
    ScriptedProposer,
    make_proposer,
    parse_proposal,
)
from .tools import DECLARATIONS, FunctionCall, deterministic_plan, select_functions
from .types import (
    DecompositionFailed,
    EmptyProposal,
    IterationRecord,
    Proposal,
    ProposerUnavailable,
    RateLimited,
    RunReport,
    TaskContext,
    TransportError,
    UnparseableProposal,
)
