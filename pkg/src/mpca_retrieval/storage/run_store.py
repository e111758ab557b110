from __future__ import annotations
import os, sqlite3
from datetime import datetime, timezone
from typing import Any, Dict, List, Mapping, Optional
from mpca_retrieval.config import resolve_paths

def default_db_path() -> str:
    return os.path.join(resolve_paths().var_dir, "runs.db")

def _conn(db_path: Optional[str]) -> sqlite3.Connection:
    return sqlite3.connect(db_path or default_db_path())

def init_db(db_path: Optional[str] = None) -> None:
    path = db_path or default_db_path()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with _conn(path) as con:
        con.execute("""CREATE TABLE IF NOT EXISTS pipeline_runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            ts TEXT, dataset TEXT, method TEXT, dims TEXT, bits INTEGER, seed INTEGER,
            ccr1 REAL, ccr2 REAL, ccr3 REAL, ccr_w REAL, map REAL,
            fit_ms INTEGER, query_ms INTEGER)""")
        con.commit()

def _real(v: Any) -> Optional[float]:
    try: return float(v)
    except (TypeError, ValueError): return None

def record_run(report: Mapping[str, Any], dataset: str = "", db_path: Optional[str] = None) -> int:
    """Append one pipeline report (its key/value form); returns the row id."""
    init_db(db_path)
    with _conn(db_path) as con:
        cur = con.execute("""INSERT INTO pipeline_runs
            (ts,dataset,method,dims,bits,seed,ccr1,ccr2,ccr3,ccr_w,map,fit_ms,query_ms)
            VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?)""",
            (datetime.now(timezone.utc).isoformat(), dataset, str(report.get("method", "")),
             str(report.get("dims", "")), int(report.get("bits", 0)), int(report.get("seed", 0)),
             _real(report.get("ccr1")), _real(report.get("ccr2")), _real(report.get("ccr3")),
             _real(report.get("ccr_w")), _real(report.get("map")),
             int(report.get("fit_ms", 0)), int(report.get("query_ms", 0))))
        con.commit()
        return int(cur.lastrowid or 0)

def list_runs(limit: Optional[int] = 20, db_path: Optional[str] = None) -> List[Dict[str, Any]]:
    init_db(db_path)
    with _conn(db_path) as con:
        con.row_factory = sqlite3.Row
        q = "SELECT * FROM pipeline_runs ORDER BY id DESC"
        if limit: q += " LIMIT ?"
        cur = con.execute(q, ((limit,) if limit else ()))
        return [dict(r) for r in cur.fetchall()]
