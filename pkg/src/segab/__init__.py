"""Simulator and optimization library for robust segmented analog downlink
broadcast in wireless federated learning."""

__version__ = "0.1.0"

from .baselines import (
    Scheme,
    ideal_broadcast,
    minmax_beamformer,
    minsum_beamformer,
)
from .beamforming import (
    AdmmResult,
    AdmmState,
    BeamSolution,
    RobustParams,
    admm_solve,
    eval_worst_case_H,
    mrt_initializer,
    mu_update,
    qcqp_xdsub,
    solve_round,
    worst_case_direction,
    worst_case_error,
)
from .channel import (
    ChannelRound,
    DeviceGeometry,
    dbm_to_watt,
    draw_geometries,
    gen_channel_round,
    path_gain_db,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateBeamError,
    UnsupportedTaskError,
)
from .fl import (
    BoundParams,
    RoundMetrics,
    RunConfig,
    RunResult,
    SeedBundle,
    aggregate,
    estimate_assumption_constants,
    eval_bound,
    local_sgd,
    run_training,
)
from .linalg import (
    SeededRng,
    derive_stream,
    dominant_eigvec,
    solve_regularized_normal,
    standard_complex_normal,
)
from .segments import (
    PackedSegments,
    SegmentPlan,
    broadcast_receive,
    compute_error_vector,
    draw_noise,
    eval_H,
    make_plan,
    segment_and_pack,
    unpack,
)
from .tasks import (
    Dataset,
    LogisticTask,
    MlpTask,
    QuadraticTask,
    load_dataset,
    make_blobs_dataset,
    save_dataset,
    solve_optimum,
)
