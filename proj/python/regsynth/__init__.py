"""Joint contrast synthesis and nonrigid 2D registration."""

from _regsynth import (  # noqa: F401
    generate_phantom_pair,
    generate_benchmark_pair,
    mutual_information,
    harris_response,
    warp_image,
    integrate_velocity,
    registration_error,
    register_pair,
)

__all__ = [
    "generate_phantom_pair",
    "generate_benchmark_pair",
    "mutual_information",
    "harris_response",
    "warp_image",
    "integrate_velocity",
    "registration_error",
    "register_pair",
]
