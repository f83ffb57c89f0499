import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

from sgflow.utils.logging import get_logger

log = get_logger(__name__)

CONFIG_ENV = "SGFLOW_CONFIG"
THREADS_ENV = "SGFLOW_THREADS"
LOCAL_CONFIG_FILE = Path("sgflow.json")

DEFAULT_SETTINGS = {
    "tol_kkt": 1e-9,         # QP KKT residual for Optimal status
    "tol_tie": 1e-10,        # Bland tie-break window
    "eps_act": 1e-8,         # activity threshold (reporting only)
    "tol_rank": 1e-10,       # relative singular value cut-off
    "tol_cq": 1e-8,          # MFCQ margin
    "tol_sc": 1e-8,          # strict complementarity
    "kkt_report_tol": 1e-6,
    "eps_conv": 1e-8,        # convergence on the flow speed
    "divergence_bound": 1e8,
    "record_every": 1,
    "stepper": "adaptive",
    "rtol": 1e-8,
    "atol": 1e-10,
    "horizon": 50.0,
    "threads": 0,            # 0 = one worker per CPU
}


@dataclass(frozen=True)
class Settings:
    tol_kkt: float = DEFAULT_SETTINGS["tol_kkt"]
    tol_tie: float = DEFAULT_SETTINGS["tol_tie"]
    eps_act: float = DEFAULT_SETTINGS["eps_act"]
    tol_rank: float = DEFAULT_SETTINGS["tol_rank"]
    tol_cq: float = DEFAULT_SETTINGS["tol_cq"]
    tol_sc: float = DEFAULT_SETTINGS["tol_sc"]
    kkt_report_tol: float = DEFAULT_SETTINGS["kkt_report_tol"]
    eps_conv: float = DEFAULT_SETTINGS["eps_conv"]
    divergence_bound: float = DEFAULT_SETTINGS["divergence_bound"]
    record_every: int = DEFAULT_SETTINGS["record_every"]
    stepper: str = DEFAULT_SETTINGS["stepper"]
    rtol: float = DEFAULT_SETTINGS["rtol"]
    atol: float = DEFAULT_SETTINGS["atol"]
    horizon: float = DEFAULT_SETTINGS["horizon"]
    threads: int = DEFAULT_SETTINGS["threads"]

    @classmethod
    def from_dict(cls, config: dict) -> "Settings":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(config) - known)
        if unknown:
            log.warning(f"ignoring unknown settings: {', '.join(unknown)}")
        merged = dict(DEFAULT_SETTINGS)
        merged.update({k: v for k, v in config.items() if k in known})
        return cls(**merged)


def _config_path(path: Optional[Union[str, Path]]) -> Optional[Path]:
    if path is not None:
        return Path(path)
    env_path = os.environ.get(CONFIG_ENV)
    if env_path:
        return Path(env_path)
    if LOCAL_CONFIG_FILE.exists():
        return LOCAL_CONFIG_FILE
    return None


def load_settings(path: Optional[Union[str, Path]] = None) -> Settings:
    """Load settings from a JSON file, filling missing keys from the defaults.

    Lookup order: explicit path, $SGFLOW_CONFIG, ./sgflow.json. With no file
    the defaults are returned.
    """
    config_path = _config_path(path)
    if config_path is None:
        return Settings()

    with open(config_path, "r", encoding="utf-8") as f:
        config = json.load(f)
    if not isinstance(config, dict):
        raise ValueError(f"settings file {config_path} must hold a JSON object")
    log.debug(f"settings loaded from {config_path}")
    return Settings.from_dict(config)


def thread_count(settings: Optional[Settings] = None) -> int:
    """Worker cap for sweeps: $SGFLOW_THREADS, else settings, else CPU count."""
    env_value = os.environ.get(THREADS_ENV, "").strip()
    if env_value:
        try:
            value = int(env_value)
        except ValueError:
            log.warning(f"ignoring non-integer {THREADS_ENV}={env_value!r}")
        else:
            if value > 0:
                return value
    configured = settings.threads if settings is not None else 0
    if configured > 0:
        return configured
    return os.cpu_count() or 1
