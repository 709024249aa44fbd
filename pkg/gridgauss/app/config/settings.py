"""
Runtime configuration
Centralized numerical defaults and environment overrides.
"""

import os

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


class GridGaussSettings:
    """Library and CLI configuration settings"""

    def __init__(self):
        # Parallelism (0 = one worker per CPU)
        self.threads = _env_int("GMRF_THREADS", 0)

        # Sampling
        self.jacobi_iterations = _env_int("GMRF_JACOBI_ITERATIONS", 1000)

        # Conditioning solves
        self.cg_rtol = _env_float("GMRF_CG_RTOL", 1e-10)
        self.cg_maxiter_factor = _env_int("GMRF_CG_MAXITER_FACTOR", 10)

        # Fitting
        self.variance_floor = _env_float("GMRF_VARIANCE_FLOOR", 1e-6)

        # Guard rails
        self.oracle_max_pixels = _env_int("GMRF_ORACLE_MAX_PIXELS", 4096)
        self.csv_max_pixels = _env_int("GMRF_CSV_MAX_PIXELS", 4096)

        # Logging
        self.log_level = os.getenv("LOG_LEVEL", "INFO")
        self.log_format = os.getenv("LOG_FORMAT", "text")

    @property
    def worker_count(self) -> int:
        """Effective number of worker threads"""
        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1


# Global settings instance
settings = GridGaussSettings()
