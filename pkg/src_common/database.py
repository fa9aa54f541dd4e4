import sqlite3
import threading

import numpy as np
from loguru import logger

from src_common.common_utils import CrpRecord, EnrolmentExhaustedError


def _record(row: tuple, used: bool = False) -> CrpRecord:
    challenge, helper_data, key_digest, erasure_mask = row
    return CrpRecord(
        challenge=challenge, helper_data=helper_data, key_digest=key_digest, erasure_mask=erasure_mask, used=used
    )


class CrpDatabase:
    def __init__(self, db_path: str = ":memory:", table_name: str = "crp_records"):
        """Initialize the verifier's challenge-response store. Defaults to an in-memory database."""
        logger.trace("Connecting to CRP database {} with table name {}", db_path, table_name)
        self.table_name = table_name
        self.db_path = db_path
        self.lock = threading.Lock()
        self.conn = sqlite3.connect(self.db_path, check_same_thread=False)
        self.create_crp_table()
        logger.trace("CRP database connected: {}", self.db_path)

    def __enter__(self):
        """Enter the runtime context related to this object."""
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        """Exit the runtime context related to this object."""
        self.close()

    def close(self):
        if self.conn:
            self.conn.close()
            self.conn = None
            logger.trace("CRP database connection closed.")

    @logger.catch(reraise=True)
    def create_crp_table(self):
        """Create the CRP table if it does not exist yet."""
        sql_create_table = f"""
        CREATE TABLE IF NOT EXISTS {self.table_name} (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            device_id TEXT NOT NULL,
            challenge BLOB NOT NULL,
            helper_data BLOB NOT NULL,
            key_digest BLOB NOT NULL,
            erasure_mask BLOB NOT NULL DEFAULT x'',
            used INTEGER DEFAULT 0,
            UNIQUE (device_id, challenge)
        );
        """
        with self.lock:
            self.conn.execute(sql_create_table)
            self.conn.commit()

    @logger.catch(reraise=True)
    def insert_records(self, device_id: str, records: list[CrpRecord]):
        """Store freshly enrolled CRPs of one device."""
        sql_insert = f"""
        INSERT INTO {self.table_name} (device_id, challenge, helper_data, key_digest, erasure_mask, used)
        VALUES (?, ?, ?, ?, ?, ?);
        """
        rows = [(device_id, r.challenge, r.helper_data, r.key_digest, r.erasure_mask, int(r.used)) for r in records]
        try:
            with self.lock:
                self.conn.executemany(sql_insert, rows)
                self.conn.commit()
            logger.success("Stored {} CRPs for device {}", len(rows), device_id)
        except sqlite3.Error as e:
            logger.error(f"Error inserting CRPs for device {device_id}: {e}")
            raise

    def count_unused(self, device_id: str) -> int:
        sql_count = f"SELECT COUNT(*) FROM {self.table_name} WHERE device_id = ? AND used = 0"
        with self.lock:
            (count,) = self.conn.execute(sql_count, (device_id,)).fetchone()
        return count

    def pop_random(self, device_id: str, rng: np.random.Generator) -> CrpRecord:
        """
        Remove and return a random unused CRP of the device. A popped record never comes back.
        :param device_id: enrolled device
        :param rng: verifier's generator choosing the challenge
        :return: CrpRecord marked as used
        """
        sql_candidates = f"SELECT id FROM {self.table_name} WHERE device_id = ? AND used = 0 ORDER BY id"
        sql_select = f"SELECT challenge, helper_data, key_digest, erasure_mask FROM {self.table_name} WHERE id = ?"
        sql_delete = f"DELETE FROM {self.table_name} WHERE id = ?"
        with self.lock:
            candidates = [row[0] for row in self.conn.execute(sql_candidates, (device_id,)).fetchall()]
            if not candidates:
                logger.warning("No unused CRP left for device {}", device_id)
                raise EnrolmentExhaustedError(device_id)
            record_id = candidates[int(rng.integers(len(candidates)))]
            row = self.conn.execute(sql_select, (record_id,)).fetchone()
            self.conn.execute(sql_delete, (record_id,))
            self.conn.commit()
        logger.trace("CRP {} of device {} consumed, {} left", record_id, device_id, len(candidates) - 1)
        return _record(row, used=True)

    def find(self, device_id: str, challenge: bytes) -> CrpRecord | None:
        """Look up an unused CRP by challenge."""
        sql_find = f"""
        SELECT challenge, helper_data, key_digest, erasure_mask FROM {self.table_name}
        WHERE device_id = ? AND challenge = ? AND used = 0
        """
        with self.lock:
            row = self.conn.execute(sql_find, (device_id, challenge)).fetchone()
        if row is None:
            return None
        return _record(row)

    @logger.catch(reraise=True)
    def delete_device(self, device_id: str):
        """Drop every CRP of one device."""
        with self.lock:
            self.conn.execute(f"DELETE FROM {self.table_name} WHERE device_id = ?", (device_id,))
            self.conn.commit()
        logger.success("CRPs of device {} deleted", device_id)
