import os
import sqlite3

from .utils import now_utc


class Store:
    """Run ledger: one row per run or sweep cell."""

    def __init__(self, db_path: str) -> None:
        parent = os.path.dirname(db_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        self.conn = sqlite3.connect(db_path)
        self.conn.row_factory = sqlite3.Row
        self._init_tables()

    def _init_tables(self) -> None:
        cur = self.conn.cursor()
        cur.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                config_hash TEXT NOT NULL,
                preset TEXT,
                status TEXT NOT NULL,
                out_dir TEXT NOT NULL,
                final_objective REAL,
                final_residual REAL,
                error TEXT,
                started_at TEXT NOT NULL,
                finished_at TEXT
            )
            """
        )
        cur.execute("CREATE INDEX IF NOT EXISTS idx_runs_config_hash ON runs(config_hash)")
        self.conn.commit()

    def close(self) -> None:
        self.conn.close()

    def start_run(self, config_hash: str, out_dir: str, preset: str | None = None) -> int:
        cur = self.conn.cursor()
        cur.execute(
            "INSERT INTO runs(config_hash, preset, status, out_dir, started_at) VALUES(?, ?, ?, ?, ?)",
            (config_hash, preset, "running", out_dir, now_utc().isoformat()),
        )
        self.conn.commit()
        return int(cur.lastrowid)

    def finish_run(
        self,
        run_id: int,
        status: str,
        final_objective: float | None = None,
        final_residual: float | None = None,
        error: str | None = None,
    ) -> None:
        cur = self.conn.cursor()
        cur.execute(
            """
            UPDATE runs SET status = ?, final_objective = ?, final_residual = ?, error = ?, finished_at = ?
            WHERE run_id = ?
            """,
            (status, final_objective, final_residual, error, now_utc().isoformat(), run_id),
        )
        self.conn.commit()

    def get_run(self, run_id: int) -> sqlite3.Row | None:
        cur = self.conn.cursor()
        cur.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,))
        return cur.fetchone()

    def runs_for_hash(self, config_hash: str) -> list[sqlite3.Row]:
        cur = self.conn.cursor()
        cur.execute("SELECT * FROM runs WHERE config_hash = ? ORDER BY run_id", (config_hash,))
        return cur.fetchall()

    def recent_runs(self, limit: int = 20) -> list[sqlite3.Row]:
        cur = self.conn.cursor()
        cur.execute("SELECT * FROM runs ORDER BY run_id DESC LIMIT ?", (limit,))
        return cur.fetchall()
