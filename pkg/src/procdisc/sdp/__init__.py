"""Block Hermitian semidefinite programs: modelling, solving and SDPA export."""

from .problem import (EqualityFamily, HermitianSdp, identity_left_map, identity_map,
                      trace_left_map, trace_map)
from .sdpa import export_sdpa, read_sdpa
from .solver import (MAX_ITERATIONS, NUMERICAL_FAILURE, OPTIMAL, SdpFailure, SdpSettings,
                     SdpSizeError, SdpSolution, add_solve_listener, remove_solve_listener,
                     solve)

__all__ = [
    "EqualityFamily", "HermitianSdp", "identity_left_map", "identity_map", "trace_left_map",
    "trace_map", "export_sdpa", "read_sdpa", "MAX_ITERATIONS", "NUMERICAL_FAILURE", "OPTIMAL",
    "SdpFailure", "SdpSettings", "SdpSizeError", "SdpSolution", "add_solve_listener",
    "remove_solve_listener", "solve",
]
