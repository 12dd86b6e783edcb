"""
Configuration core module for foliashadow
Reads tolerances, worker counts and output locations from the environment
"""

import os
from functools import lru_cache
from typing import Optional

# Load environment variables
from dotenv import load_dotenv
load_dotenv()


class Settings:
    """Process-wide numeric tolerances and runtime knobs"""

    def __init__(self):
        self.tau_geom = float(os.getenv("FOLIASHADOW_TAU_GEOM", "1e-9"))
        self.tau_inv = float(os.getenv("FOLIASHADOW_TAU_INV", "1e-12"))
        self.max_inverse_iters = int(os.getenv("FOLIASHADOW_MAX_INVERSE_ITERS", "200"))
        self.threads = int(os.getenv("FOLIASHADOW_THREADS", "1"))
        self.out_dir = os.getenv("FOLIASHADOW_OUT_DIR", "results")
        self.max_states = int(os.getenv("FOLIASHADOW_MAX_STATES", "200000000"))
        self.environment = os.getenv("FOLIASHADOW_ENVIRONMENT", "production")

    def is_development(self) -> bool:
        """Check if the status block should be printed at start-up"""
        return self.environment == "development"

    def print_status(self):
        """Print the resolved settings (development only)"""
        print("🔧 Settings Status:")
        print(f"   tau_geom: {self.tau_geom}")
        print(f"   tau_inv: {self.tau_inv}")
        print(f"   max_inverse_iters: {self.max_inverse_iters}")
        print(f"   threads: {self.threads}")
        print(f"   out_dir: {self.out_dir}")
        print(f"   max_states: {self.max_states}")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def resolve_threads(threads: Optional[int] = None) -> int:
    """Worker count for joblib loops; explicit value wins over the environment"""
    if threads is None:
        threads = get_settings().threads
    return max(1, int(threads))
