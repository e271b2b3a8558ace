import json
from unittest.mock import Mock, patch

import pytest
import requests
from common_utils.logger.client import LoggerClient


@pytest.fixture(autouse=True)
def no_collector(monkeypatch):
    """Keep the environment from pointing the logger at a real collector."""
    monkeypatch.delenv("LOGGER_SERVICE_URL", raising=False)
    monkeypatch.delenv("VOLUNTIER_LOG_LEVEL", raising=False)


class TestLocalOutput:
    def test_json_line_on_stderr(self, capsys):
        logger = LoggerClient("voluntier-test")
        assert logger.info("Work unit assigned", {"wu_id": "mux_rep0"}) is True
        record = json.loads(capsys.readouterr().err)
        assert record["service"] == "voluntier-test"
        assert record["level"] == "INFO"
        assert record["message"] == "Work unit assigned"
        assert record["details"] == {"wu_id": "mux_rep0"}
        assert "timestamp" in record

    def test_level_threshold(self, capsys):
        logger = LoggerClient("voluntier-test")
        assert logger.debug("hidden") is False
        logger.set_level("debug")
        assert logger.debug("shown") is True
        assert json.loads(capsys.readouterr().err)["message"] == "shown"

    def test_level_from_environment(self, monkeypatch):
        monkeypatch.setenv("VOLUNTIER_LOG_LEVEL", "error")
        logger = LoggerClient("voluntier-test")
        assert logger.warning("quiet") is False
        assert logger.error("loud") is True


class TestCollector:
    def test_posts_record(self):
        logger = LoggerClient("voluntier-test", logger_url="http://collector:9000")
        with patch("common_utils.logger.client.requests.post", return_value=Mock(status_code=200)) as post:
            assert logger.info("Sweep submitted", {"sweep": "mux"}) is True
        url = post.call_args.args[0]
        body = json.loads(post.call_args.kwargs["data"])
        assert url == "http://collector:9000/log"
        assert body["details"] == {"sweep": "mux"}

    def test_rejected_record(self):
        logger = LoggerClient("voluntier-test", logger_url="http://collector:9000")
        with patch("common_utils.logger.client.requests.post", return_value=Mock(status_code=500)):
            assert logger.info("Sweep submitted") is False

    def test_falls_back_to_stderr(self, capsys):
        logger = LoggerClient("voluntier-test", logger_url="http://collector:9000")
        with patch("common_utils.logger.client.requests.post",
                   side_effect=requests.ConnectionError("refused")):
            assert logger.error("Command failed") is False
        record = json.loads(capsys.readouterr().err)
        assert record["details"]["collector_error"] == "refused"
