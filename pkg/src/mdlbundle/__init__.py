"""Two-part MDL codes over Fisher-quantized parameter grids, with local exponential tilting."""

from .bundle import (
    TiltedDensity,
    TiltingGrid,
    build_tilting_grid,
    classify_sequence,
    g_function,
    log_normalizer,
    select_xi,
    tilted_log_likelihood,
)
from .codec import (
    CodeConfig,
    Codebook,
    Encoding,
    RegretReport,
    boundary_encode,
    decode_bitstream,
    encode,
    encode_bitstream,
    exp_regret_bound,
    nonexp_regret_bound,
    regret,
)
from .errors import (MDLError, DomainError, NumericError, DegeneracyError, ConvergenceError, PreconditionError, ConstructionError, ConfigError, CapacityError, UnsupportedError, WrongRouteError, DecodeError)
from .models import (
    AssumptionConstants,
    BernoulliFamily,
    CanonicalBernoulli,
    Family,
    FinitePmf,
    GenericFamily,
    MixtureFamily,
    ParamSpace,
    certify_assumptions,
    empirical_fisher,
    family_from_dict,
    fisher,
    log_likelihood,
    mle,
    v_statistic,
)
from .oracles import (
    RiskCertificate,
    desk_certify,
    exhaustive_kraft,
    exhaustive_max_regret,
    kl_divergence,
    renyi_divergence,
    shtarkov_complexity,
    verify_risk_chain,
    verify_tail_bound,
)
from .quantizer import QuantizedGrid, build_grid, cardinality_bound, nearest_point

__version__ = "0.1.0"
