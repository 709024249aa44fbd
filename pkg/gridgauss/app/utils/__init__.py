from .logging_config import JsonFormatter, configure_logging_from_env, get_command_logger, setup_logging
from .rng import SeedLike, make_rng, seed_from_option, spawn_seeds, standard_normal

__all__ = [
    # Logging
    "setup_logging",
    "get_command_logger",
    "configure_logging_from_env",
    "JsonFormatter",
    # Random numbers
    "SeedLike",
    "make_rng",
    "seed_from_option",
    "spawn_seeds",
    "standard_normal",
]
