"""SE(3)-equivariant trajectory diffusion over interacting particle systems."""

from ._core import (
    Model,
    __version__,
    ade_fde,
    apply_rigid_motion,
    linear_schedule,
    marginal_score,
    project_zero_com,
    random_rotation,
    read_trajectories,
    sample_subspace_gaussian,
    simulate,
    write_trajectories,
)

__all__ = [
    "Model",
    "__version__",
    "ade_fde",
    "apply_rigid_motion",
    "linear_schedule",
    "marginal_score",
    "project_zero_com",
    "random_rotation",
    "read_trajectories",
    "sample_subspace_gaussian",
    "simulate",
    "write_trajectories",
]
