# logger_client.py
import json
import os
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import requests

LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40}


class LoggerClient:
    """Structured logger shared by the voluntier services.

    Records are shipped to a log collector when ``LOGGER_SERVICE_URL`` is set;
    otherwise (or when the collector is unreachable) they are written to stderr
    as one JSON object per line.
    """

    def __init__(self, service_name: str, logger_url: Optional[str] = None, level: Optional[str] = None):
        self.service_name = service_name
        self.logger_url = logger_url or os.environ.get("LOGGER_SERVICE_URL")
        self.level = (level or os.environ.get("VOLUNTIER_LOG_LEVEL", "INFO")).upper()

    def enabled(self, level: str) -> bool:
        return LEVELS[level] >= LEVELS.get(self.level, 20)

    def set_level(self, level: str) -> None:
        self.level = level.upper()

    def _record(self, level: str, message: str, details: Optional[Dict[str, Any]]) -> Dict[str, Any]:
        record = {
            "service": self.service_name,
            "level": level,
            "message": message,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        if details:
            record["details"] = details
        return record

    def _emit_local(self, record: Dict[str, Any]) -> None:
        print(json.dumps(record, default=str, sort_keys=True), file=sys.stderr)

    def _send_log(self, level: str, message: str, details: Optional[Dict[str, Any]] = None) -> bool:
        if not self.enabled(level):
            return False
        record = self._record(level, message, details)
        if not self.logger_url:
            self._emit_local(record)
            return True
        try:
            response = requests.post(
                f"{self.logger_url}/log",
                data=json.dumps(record, default=str),
                headers={"Content-Type": "application/json"},
                timeout=2,
            )
            return response.status_code == 200
        except Exception as e:
            # Collector unavailable: keep the record on the console
            record.setdefault("details", {})["collector_error"] = str(e)
            self._emit_local(record)
            return False

    def info(self, message: str, details: Optional[Dict[str, Any]] = None) -> bool:
        return self._send_log("INFO", message, details)

    def error(self, message: str, details: Optional[Dict[str, Any]] = None) -> bool:
        return self._send_log("ERROR", message, details)

    def warning(self, message: str, details: Optional[Dict[str, Any]] = None) -> bool:
        return self._send_log("WARNING", message, details)

    def debug(self, message: str, details: Optional[Dict[str, Any]] = None) -> bool:
        return self._send_log("DEBUG", message, details)
