"""State-space-chained low-rank adapters for a frozen transformer encoder.

Low-rank adapters placed on the attention projections of a frozen encoder,
with neighbouring adapters of the same kind linked through a small recurrent
state that runs across layers rather than across tokens.
"""

from .adapter import (
    AdapterConfig,
    LoraModule,
    TimeModule,
    init_lora_module,
    init_time_module,
    lora_forward,
    module_forward,
    normalize_state,
    project_down,
    state_update,
)
from .encoder import EncoderConfig, FrozenEncoder, attach_adapters, build_encoder, encoder_forward
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    InputError,
    NumericError,
    PlanError,
    SequencingError,
    SSMLoRAError,
    TrainingError,
)
from .planner import (
    InsertionPlan,
    ModelDims,
    PlanEntry,
    alternating_ratio,
    budget_report,
    count_params,
    plan_alternating,
    plan_by_name,
    plan_dense,
    plan_skip_one,
)
from .tasks import Dataset, TaskSpec, gen_task
from .time_axis import Chain, PassState, begin_pass, chain_step, run_chain_oracle
from .training import TrainOptions, evaluate, gradcheck, train

__version__ = "0.1.0"
