"""
Tests for the FrugalHop config module.
"""

import os
import unittest
import tempfile
from pathlib import Path
from unittest.mock import patch

from FrugalHop.config import AuthConfig, RunConfig, Settings, load_config, parse_config_file
from FrugalHop.errors import ConfigError


class TestSettings(unittest.TestCase):
    """Test the process-level settings."""

    def test_settings_defaults(self):
        """Test that settings have the expected defaults."""
        with patch.dict(os.environ, {}, clear=True):
            settings = Settings(_env_file=None)
        self.assertIsNone(settings.remote_policy_url)
        self.assertIsNone(settings.remote_retriever_url)
        self.assertIsNone(settings.api_key)
        self.assertEqual(settings.request_timeout, 30)
        self.assertEqual(settings.log_level, "INFO")
        self.assertGreaterEqual(settings.workers, 1)

    def test_remote_urls_from_environment(self):
        """Test that the unprefixed service variables are honored."""
        env = {
            "REMOTE_POLICY_URL": "http://policy.local",
            "REMOTE_RETRIEVER_URL": "http://retriever.local",
            "REMOTE_POLICY_API_KEY": "secret",
        }
        with patch.dict(os.environ, env, clear=True):
            settings = Settings(_env_file=None)
        self.assertEqual(settings.remote_policy_url, "http://policy.local")
        self.assertEqual(settings.remote_retriever_url, "http://retriever.local")
        self.assertEqual(settings.api_key, "secret")

    def test_invalid_log_level(self):
        """Test that an unknown log level is rejected."""
        with self.assertRaises(ValueError):
            Settings(_env_file=None, log_level="chatty")

    def test_auth_headers(self):
        """Test that an API key produces both auth headers."""
        with patch.dict(os.environ, {"REMOTE_POLICY_API_KEY": "k"}, clear=True):
            headers = AuthConfig(Settings(_env_file=None)).get_headers()
        self.assertEqual(headers["X-API-Key"], "k")
        self.assertEqual(headers["Authorization"], "Bearer k")

    def test_no_auth_headers_without_key(self):
        """Test that no headers are sent without credentials."""
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(AuthConfig(Settings(_env_file=None)).get_headers(), {})


class TestLoadConfig(unittest.TestCase):
    """Test config file parsing and flag precedence."""

    def setUp(self):
        self.tempdir = tempfile.TemporaryDirectory()
        self.dir = Path(self.tempdir.name)

    def tearDown(self):
        self.tempdir.cleanup()

    def _write(self, text: str) -> Path:
        path = self.dir / "run.cfg"
        path.write_text(text, encoding="utf-8")
        return path

    def test_defaults(self):
        """Test that no file and no flags yields every default."""
        config = load_config()
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.budget, 6)
        self.assertEqual(config.k, 3)
        self.assertEqual(config.r_max, 2.0)
        self.assertEqual(config.alpha, 1.0)
        self.assertEqual(config.tau, 1.0)
        self.assertEqual(config.mixture, 0.9)
        self.assertEqual(config.group_size, 8)

    def test_empty_file(self):
        """Test that an empty config file yields the defaults."""
        self.assertEqual(load_config(self._write("")), RunConfig())

    def test_flag_overrides_file(self):
        """Test that a flag wins over the file value."""
        path = self._write("budget = 4\nk = 5\n")
        config = load_config(path, {"budget": 6})
        self.assertEqual(config.budget, 6)
        self.assertEqual(config.k, 5)

    def test_none_override_keeps_file_value(self):
        """Test that unset flags do not clobber file values."""
        config = load_config(self._write("budget = 4"), {"budget": None})
        self.assertEqual(config.budget, 4)

    def test_comments_and_dashes(self):
        """Test comment lines and dashed keys."""
        path = self._write("# reward settings\n\nr-max = 3.0\nsource_policy = finish_only\n")
        config = load_config(path)
        self.assertEqual(config.r_max, 3.0)
        self.assertEqual(config.source_policy, "finish_only")

    def test_unknown_key(self):
        """Test that an unknown key is reported by name."""
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("budgit = 4"))
        self.assertIn("budgit", str(ctx.exception))

    def test_type_mismatch(self):
        """Test that a value of the wrong type is rejected."""
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("budget = six"))
        self.assertIn("budget", str(ctx.exception))

    def test_budget_must_be_positive(self):
        """Test the B >= 1 precondition."""
        with self.assertRaises(ConfigError) as ctx:
            load_config(overrides={"budget": 0})
        self.assertIn("B >= 1", str(ctx.exception))

    def test_keep_cannot_exceed_candidates(self):
        """Test the bootstrap keep <= candidates precondition."""
        with self.assertRaises(ConfigError):
            load_config(overrides={"candidate_count": 2, "keep": 3})

    def test_missing_equals(self):
        """Test that a line without '=' is rejected with its line number."""
        with self.assertRaises(ConfigError) as ctx:
            parse_config_file(self._write("budget = 4\nnonsense\n"))
        self.assertIn(":2:", str(ctx.exception))


if __name__ == "__main__":
    unittest.main()
