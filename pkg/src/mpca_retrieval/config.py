from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
import os, sys

@dataclass
class Paths:
    base_dir: str
    var_dir: str

@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    workers: int = 1
    chunk_size: int = 1024
    scan_shards: int = 1
    eig_solver: str = "jacobi"

def resolve_paths() -> Paths:
    if getattr(sys, "frozen", False):
        runtime = Path(sys.executable).parent
        var_env = os.getenv("MPCA_VAR_DIR")
        var = Path(var_env) if var_env else (runtime / "var")
        var.mkdir(parents=True, exist_ok=True)
        return Paths(str(runtime), str(var))

    root = Path(__file__).resolve().parents[2]
    var = Path(os.getenv("MPCA_VAR_DIR") or (root / "var"))
    var.mkdir(parents=True, exist_ok=True)
    return Paths(str(root), str(var))

def _env_int(name: str, default: int, minimum: int = 1) -> int:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        return max(minimum, int(raw))
    except ValueError:
        return default

def load_settings() -> Settings:
    solver = (os.getenv("MPCA_EIG_SOLVER") or "jacobi").strip().lower()
    if solver not in ("jacobi", "lapack"):
        solver = "jacobi"
    return Settings(
        log_level=(os.getenv("MPCA_LOG_LEVEL") or "INFO").strip().upper(),
        workers=_env_int("MPCA_WORKERS", 1),
        chunk_size=_env_int("MPCA_CHUNK_SIZE", 1024),
        scan_shards=_env_int("MPCA_SCAN_SHARDS", 1),
        eig_solver=solver,
    )
