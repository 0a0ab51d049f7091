"""Monte Carlo Feynman-Kac solvers for heat flows of forms on the half-space.

Reflected horizontal diffusions on the frame bundle carry a multiplicative
functional that encodes curvature coupling and absolute boundary conditions.
The package covers scalar and 2-form heat flows, the half-plane
Navier-Stokes vorticity equation and a flat kinematic dynamo, together with
deterministic reference solvers.
"""
from ._accel import backend_name
from .estimator import (EstimationFailed, EstimatorResult, McConfig, grid_field_estimate,
                        heat_form_estimate, heat_scalar_estimate, reduce_statistics)
from .fields import FormField, StripGrid, VelocityField
from .frame_bundle import FrameCollapseError, FramePoint
from .geometry import (ConnectionField, ContractError, CurvaturePack, DegenerateMetricError,
                       MetricModel, OutOfRangeError, TraceTorsion)

__version__ = "0.1.0"
