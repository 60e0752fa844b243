"""Estimators: joint-EKF oracles, the server-based filters, and the naive baseline."""

from .beliefs import (
    FRAME_ORIGINAL,
    FRAME_TRANSFORMED,
    CorrectionMessage,
    CrossCovTable,
    JointBelief,
    RobotBelief,
    assemble_joint,
)
from .joint import (
    JointEkf,
    TransformedJointEkf,
    joint_ekf_propagate,
    joint_ekf_update,
    joint_ekf_update_landmark,
)
from .naive import naive_landmark_update, naive_update
from .runtime import (
    ESTIMATOR_KINDS,
    JointRuntime,
    NaiveFilter,
    OsbFilter,
    TransformedJointRuntime,
    TsbFilter,
    make_filter,
)
from .server import (
    UpdateBundleA,
    UpdateBundleB,
    landmark_update,
    osb_align_crosscov,
    osb_robot_apply,
    osb_robot_propagate,
    osb_server_corrections,
    osb_server_update_crosscov,
    schmidt_partial_update,
    tsb_robot_apply,
    tsb_robot_propagate,
    tsb_server_corrections,
    tsb_server_update_crosscov,
)
