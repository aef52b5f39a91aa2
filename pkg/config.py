"""
Configuration settings for EdgeNav
Detector distillation, navigation environment and PPO hyperparameters
"""

import os
from typing import Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

# Load environment variables from .env file
load_dotenv()

ENV_PREFIX = "EDGENAV_"


def _as_bool(value: str) -> bool:
    return value.strip().lower() in {"1", "true", "yes", "on"}


class Config:
    """Main configuration class"""

    def __init__(self, overrides: Optional[Mapping[str, Optional[str]]] = None):
        self._env: Dict[str, str] = {k: v for k, v in os.environ.items() if k.startswith(ENV_PREFIX)}
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            name = key if key.startswith(ENV_PREFIX) else f"{ENV_PREFIX}{key}"
            self._env[name] = str(value)
        self._parse_errors: List[str] = []

        # Debug and Logging
        self.DEBUG: bool = self._bool("DEBUG", "false")
        self.LOG_LEVEL: str = self._str("LOG_LEVEL", "INFO").upper()
        self.PROGRESS: bool = self._bool("PROGRESS", "true")

        # Reproducibility
        self.SEED: int = self._int("SEED", "0")

        # Dataset
        self.DATA_DIR: str = self._str("DATA_DIR", "./data")
        self.DATASET_SIZE: int = self._int("DATASET_SIZE", "5500")
        self.IMAGE_SIZE: int = self._int("IMAGE_SIZE", "224")
        self.TRAIN_FRACTION: float = self._float("TRAIN_FRACTION", "0.9")
        self.DATA_WORKERS: int = self._int("DATA_WORKERS", "2")

        # Detector training and distillation
        self.LEARNING_RATE: float = self._float("LEARNING_RATE", "1e-4")
        self.BATCH_SIZE: int = self._int("BATCH_SIZE", "32")
        self.TEACHER_EPOCHS: int = self._int("TEACHER_EPOCHS", "30")
        self.STUDENT_EPOCHS: int = self._int("STUDENT_EPOCHS", "50")
        self.KD_TEMPERATURE: float = self._float("KD_TEMPERATURE", "2.0")
        self.LAMBDA_KD: float = self._float("LAMBDA_KD", "1.0")
        self.LAMBDA_FEAT: float = self._float("LAMBDA_FEAT", "0.25")
        self.CONF_THRESHOLDS: Tuple[float, ...] = self._floats("CONF_THRESHOLDS", "0.25,0.45")
        self.MAP_IOU: float = self._float("MAP_IOU", "0.5")
        self.MAP_CONF_THRESHOLD: float = self._float("MAP_CONF_THRESHOLD", "0.001")
        self.PLATEAU_PATIENCE: int = self._int("PLATEAU_PATIENCE", "5")
        self.LR_FACTOR: float = self._float("LR_FACTOR", "0.5")
        self.MIN_LR: float = self._float("MIN_LR", "1e-6")
        self.IOU_WEIGHT: float = self._float("IOU_WEIGHT", "2.0")
        self.L1_WEIGHT: float = self._float("L1_WEIGHT", "1.0")
        self.AUGMENT: bool = self._bool("AUGMENT", "true")
        self.DUMP_EVERY: int = self._int("DUMP_EVERY", "5")

        # Navigation environment
        self.ROOM_SIZE: float = self._float("ROOM_SIZE", "10.0")
        self.TURN_DEGREES: float = self._float("TURN_DEGREES", "15.0")
        self.STRIDE: float = self._float("STRIDE", "0.25")
        self.PROXIMITY: float = self._float("PROXIMITY", "0.6")
        self.BOX_SIZE: float = self._float("BOX_SIZE", "0.8")
        self.MAX_EPISODE_STEPS: int = self._int("MAX_EPISODE_STEPS", "1024")
        self.NUM_OBJECTS: int = self._int("NUM_OBJECTS", "3")
        self.TERMINATE_ON_COLLISION: bool = self._bool("TERMINATE_ON_COLLISION", "true")

        # PPO
        self.PPO_LR: float = self._float("PPO_LR", "3e-4")
        self.PPO_BATCH: int = self._int("PPO_BATCH", "128")
        self.HORIZON: int = self._int("HORIZON", "1024")
        self.TOTAL_STEPS: int = self._int("TOTAL_STEPS", "500000")
        self.GAMMA: float = self._float("GAMMA", "0.99")
        self.GAE_LAMBDA: float = self._float("GAE_LAMBDA", "0.95")
        self.CLIP_EPS: float = self._float("CLIP_EPS", "0.2")
        self.PPO_EPOCHS: int = self._int("PPO_EPOCHS", "4")
        self.ENT_COEF: float = self._float("ENT_COEF", "0.01")
        self.VF_COEF: float = self._float("VF_COEF", "0.5")
        self.HIDDEN: int = self._int("HIDDEN", "64")
        self.TARGET_KL: Optional[float] = self._optional_float("TARGET_KL")
        self.MAX_GRAD_NORM: float = self._float("MAX_GRAD_NORM", "0.5")

        # Benchmark
        self.BENCH_RUNS: int = self._int("BENCH_RUNS", "100")
        self.BENCH_WARMUP: int = self._int("BENCH_WARMUP", "5")
        self.THREADS: int = self._int("THREADS", "1")

    # ------------------------------------------------------------------ parsing

    def _raw(self, name: str, default: Optional[str]) -> Optional[str]:
        return self._env.get(f"{ENV_PREFIX}{name}", default)

    def _str(self, name: str, default: str) -> str:
        return str(self._raw(name, default))

    def _bool(self, name: str, default: str) -> bool:
        return _as_bool(str(self._raw(name, default)))

    def _int(self, name: str, default: str) -> int:
        raw = self._raw(name, default)
        try:
            return int(str(raw))
        except ValueError:
            self._parse_errors.append(f"{ENV_PREFIX}{name} must be an integer, got {raw!r}")
            return int(default)

    def _float(self, name: str, default: str) -> float:
        raw = self._raw(name, default)
        try:
            return float(str(raw))
        except ValueError:
            self._parse_errors.append(f"{ENV_PREFIX}{name} must be a number, got {raw!r}")
            return float(default)

    def _optional_float(self, name: str) -> Optional[float]:
        raw = self._raw(name, None)
        if raw is None or not raw.strip():
            return None
        return self._float(name, "0")

    def _floats(self, name: str, default: str) -> Tuple[float, ...]:
        raw = str(self._raw(name, default))
        try:
            return tuple(float(part) for part in raw.split(",") if part.strip())
        except ValueError:
            self._parse_errors.append(f"{ENV_PREFIX}{name} must be a comma-separated list of numbers, got {raw!r}")
            return tuple(float(part) for part in default.split(","))

    # --------------------------------------------------------------- public api

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, Optional[str]]] = None) -> "Config":
        """Build a config from the environment, a dotenv-format run file and flag overrides"""
        layered: Dict[str, Optional[str]] = {}
        if path:
            if not os.path.exists(path):
                raise FileNotFoundError(f"config file not found: {path}")
            layered.update(dotenv_values(path))
        layered.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(layered)

    def validate_config(self) -> List[str]:
        """Validate configuration and return list of errors"""
        errors = list(self._parse_errors)

        if self.LOG_LEVEL not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            errors.append(f"LOG_LEVEL must be a logging level name, got {self.LOG_LEVEL}")

        if self.DATASET_SIZE < 0:
            errors.append("DATASET_SIZE must be non-negative")
        if not 0.0 < self.TRAIN_FRACTION < 1.0:
            errors.append("TRAIN_FRACTION must be between 0 and 1")
        if self.IMAGE_SIZE <= 0 or self.IMAGE_SIZE % 32 != 0:
            errors.append("IMAGE_SIZE must be a positive multiple of 32 (patch 4 x three 2x merges)")

        if self.LEARNING_RATE <= 0 or self.PPO_LR <= 0:
            errors.append("learning rates must be positive")
        if self.BATCH_SIZE < 1 or self.PPO_BATCH < 1:
            errors.append("batch sizes must be positive")
        if self.KD_TEMPERATURE <= 0:
            errors.append("KD_TEMPERATURE must be positive")
        if self.LAMBDA_KD < 0 or self.LAMBDA_FEAT < 0:
            errors.append("distillation weights must be non-negative")
        if not self.CONF_THRESHOLDS or any(not 0.0 <= t <= 1.0 for t in self.CONF_THRESHOLDS):
            errors.append("CONF_THRESHOLDS must be values in [0, 1]")
        if not 0.0 < self.MAP_IOU <= 1.0:
            errors.append("MAP_IOU must be in (0, 1]")

        if self.ROOM_SIZE <= 2 * self.BOX_SIZE:
            errors.append("ROOM_SIZE is too small for the boxes")
        if self.STRIDE <= 0 or self.TURN_DEGREES <= 0 or self.PROXIMITY <= 0:
            errors.append("STRIDE, TURN_DEGREES and PROXIMITY must be positive")
        if self.NUM_OBJECTS not in (1, 2, 3):
            errors.append("NUM_OBJECTS must be 1, 2 or 3")
        if self.MAX_EPISODE_STEPS < 1:
            errors.append("MAX_EPISODE_STEPS must be positive")

        if not 0.0 < self.GAMMA <= 1.0 or not 0.0 <= self.GAE_LAMBDA <= 1.0:
            errors.append("GAMMA must be in (0, 1] and GAE_LAMBDA in [0, 1]")
        if self.CLIP_EPS <= 0:
            errors.append("CLIP_EPS must be positive")
        if self.HORIZON < 1 or self.TOTAL_STEPS < 1 or self.PPO_EPOCHS < 1:
            errors.append("HORIZON, TOTAL_STEPS and PPO_EPOCHS must be positive")
        if self.TARGET_KL is not None and self.TARGET_KL <= 0:
            errors.append("TARGET_KL must be positive when set")

        if self.BENCH_WARMUP < 5:
            errors.append("BENCH_WARMUP must be at least 5")
        if self.BENCH_RUNS < 1 or self.THREADS < 1:
            errors.append("BENCH_RUNS and THREADS must be positive")

        return errors

    def as_dict(self) -> Dict[str, object]:
        """Public settings as a plain dict (for run metadata)"""
        return {k: v for k, v in vars(self).items() if k.isupper()}


# Global config instance
config = Config()

# Validate configuration on import except during tests
if os.getenv("PYTEST_CURRENT_TEST") is None and os.getenv("DISABLE_CONFIG_VALIDATION") not in {"1", "true", "True"}:
    config_errors = config.validate_config()
    if config_errors:
        error_msg = "\n".join([f"- {error}" for error in config_errors])
        raise ValueError(f"Configuration errors:\n{error_msg}")
