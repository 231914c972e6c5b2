"""Unit-consistent analytical feature generation, correlation screening,
and exhaustive best-subset descriptor search."""

from .dataio import (
    Dataset,
    RunConfig,
    load_config,
    load_dataset,
    make_synthetic_dataset,
)
from .errors import CapacityError, ConfigError, DescsearchError
from .expressions import (
    OPERATORS,
    Expression,
    Operator,
    apply,
    evaluate,
    get_operator,
    parse_expression,
    primary,
    render,
    unit_of,
)
from .generation import (
    FeatureSpace,
    GenerationConfig,
    count_upper_bound,
    generate_pairs,
    generate_rung,
    iter_final_rung,
    stream_final_rung,
    validate_values,
    value_fingerprint,
)
from .models import Model, predict, residuals
from .pipeline import RunResult, run_pipeline, write_outputs
from .screening import (
    DegenerateInput,
    EmptySpace,
    ScreeningTarget,
    SelectedSubspace,
    pearson,
    projection_score,
    sis_select,
)
from .search import (
    L0Config,
    RankDeficient,
    RankOutOfRange,
    count_models,
    fit_tuple,
    l0_search,
    rank_tuple,
    unrank_tuple,
)
from .units import Unit, UnitError, format_unit, parse_unit

__version__ = "0.1.0"
