import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path

from dotenv import load_dotenv

from phreg.errors import SettingsError

ROOT = Path(__file__).resolve().parents[1]
CFG = ROOT / "config"

DEFAULTS = {
    "em_tol": 1e-8,
    "max_iter": 5000,
    "kernel_tol": 1e-12,
    "inner_max_evals": 200,
    "threads": 1,
    "log_level": "INFO",
}

# env var -> (field, parser)
ENV_OVERRIDES = {
    "PHREG_TOL": ("em_tol", float),
    "PHREG_MAX_ITER": ("max_iter", int),
    "PHREG_KERNEL_TOL": ("kernel_tol", float),
    "PHREG_INNER_MAX_EVALS": ("inner_max_evals", int),
    "PHREG_THREADS": ("threads", int),
    "PHREG_LOG_LEVEL": ("log_level", str),
}


@dataclass(frozen=True)
class Settings:
    em_tol: float = DEFAULTS["em_tol"]
    max_iter: int = DEFAULTS["max_iter"]
    kernel_tol: float = DEFAULTS["kernel_tol"]
    inner_max_evals: int = DEFAULTS["inner_max_evals"]
    threads: int = DEFAULTS["threads"]
    log_level: str = DEFAULTS["log_level"]

    def effective_kernel_tol(self, em_tol=None):
        """Kernel tolerance kept two orders of magnitude below the EM stopping tolerance."""
        em_tol = self.em_tol if em_tol is None else em_tol
        return min(self.kernel_tol, em_tol * 1e-2)


def read_json(path, default):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except Exception:
        return default


def load_settings(config_dir=None, env=None, dotenv=True):
    """Defaults <- config/fit_defaults.json <- .env / PHREG_* environment."""
    config_dir = Path(config_dir) if config_dir is not None else CFG
    data = dict(DEFAULTS)
    cfg = read_json(config_dir / "fit_defaults.json", {})
    if isinstance(cfg, dict):
        data.update({k: v for k, v in cfg.items() if k in DEFAULTS})

    if env is None:
        if dotenv:
            load_dotenv()
        env = os.environ
    for var, (field, parse) in ENV_OVERRIDES.items():
        raw = env.get(var)
        if raw is None or str(raw).strip() == "":
            continue
        try:
            data[field] = parse(str(raw).strip())
        except ValueError:
            raise SettingsError(f"{var}={raw!r} is not a valid {parse.__name__}") from None

    settings = Settings(**data)
    if settings.threads < 1:
        settings = replace(settings, threads=1)
    return settings


def configure_logging(level="INFO"):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="[%(levelname)s] %(message)s",
    )
