import logging
import os
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest.mock import patch

from sct_evaluator.config import LOG_LEVEL_ENV, RunConfig, get_log_level, load_run_config, parse_run_config
from sct_evaluator.errors import ConfigError
from sct_evaluator.utils.provenance import config_hash


class TestParseRunConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = TemporaryDirectory()
        self.base = Path(self.tmp.name)
        (self.base / "data").mkdir()
        (self.base / "preds").mkdir()

    def tearDown(self):
        self.tmp.cleanup()

    def values(self, **extra):
        values = {'DATASET_ROOT': "data", 'PREDICTION_DIR': "preds", 'SEED': "3"}
        values.update(extra)
        return values

    def test_defaults_and_relative_paths(self):
        config = parse_run_config(self.values(), self.base)
        self.assertEqual(config.dataset_root, (self.base / "data").resolve())
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.metric_scale, "normalized")
        self.assertEqual(config.ssim_window, 11)
        self.assertEqual(config.split_ratios, (0.7, 0.15, 0.15))
        config.validate()

    def test_typed_values(self):
        config = parse_run_config(self.values(MODELS="unet, pix2pix,", METRIC_SCALE="HU",
                                              SPLIT_RATIOS="0.8,0.1,0.1", JOBS="4"), self.base)
        self.assertEqual(config.models, ("unet", "pix2pix"))
        self.assertEqual(config.metric_scale, "hu")
        self.assertEqual(config.split_ratios, (0.8, 0.1, 0.1))
        self.assertEqual(config.jobs, 4)

    def test_seed_is_required(self):
        values = self.values()
        del values['SEED']
        with self.assertRaises(ConfigError):
            parse_run_config(values, self.base)

    def test_bad_number(self):
        with self.assertRaises(ConfigError):
            parse_run_config(self.values(SEED="seven"), self.base)

    def test_unknown_keys_warned(self):
        with self.assertLogs(level=logging.WARNING) as logs:
            parse_run_config(self.values(COLOUR="blue"), self.base)
        self.assertIn("COLOUR", logs.output[0])

    def test_validate_collects_problems(self):
        config = parse_run_config(self.values(METRIC_SCALE="kelvin", SSIM_WINDOW="10",
                                              EMBEDDER="external", MASK_DIR="nowhere"), self.base)
        with self.assertRaises(ConfigError) as ctx:
            config.validate()
        message = str(ctx.exception)
        for fragment in ("METRIC_SCALE", "SSIM_WINDOW", "EMBEDDING_DIR", "MASK_DIR"):
            self.assertIn(fragment, message)

    def test_canonical_items_ignore_output_and_jobs(self):
        a = parse_run_config(self.values(JOBS="1", OUTPUT_DIR="out1"), self.base)
        b = parse_run_config(self.values(JOBS="8", OUTPUT_DIR="out2"), self.base)
        self.assertEqual(config_hash(a.canonical_items()), config_hash(b.canonical_items()))
        keys = [k for k, _ in a.canonical_items()]
        self.assertNotIn("JOBS", keys)
        self.assertEqual(keys, sorted(keys))
        c = parse_run_config(self.values(SEED="4"), self.base)
        self.assertNotEqual(config_hash(a.canonical_items()), config_hash(c.canonical_items()))

    def test_load_with_overrides(self):
        path = self.base / "run.env"
        path.write_text("# evaluation run\nDATASET_ROOT=data\nPREDICTION_DIR=preds\nSEED=3\n")
        config = load_run_config(path, seed=11, metric_scale=None)
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.metric_scale, "normalized")
        self.assertEqual(config.source, path.resolve())

    def test_seed_override_fills_missing_seed(self):
        path = self.base / "run.env"
        path.write_text("DATASET_ROOT=data\nPREDICTION_DIR=preds\n")
        self.assertEqual(load_run_config(path, seed=5).seed, 5)
        with self.assertRaises(ConfigError):
            load_run_config(path)
        with self.assertRaises(ConfigError):
            load_run_config(path, seed=None)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.base / "absent.env")


class TestLogLevel(unittest.TestCase):

    @patch.dict(os.environ, {LOG_LEVEL_ENV: "debug"})
    def test_from_environment(self):
        self.assertEqual(get_log_level(), logging.DEBUG)

    @patch.dict(os.environ, {LOG_LEVEL_ENV: "chatty"})
    def test_unknown_level_falls_back(self):
        self.assertEqual(get_log_level("WARNING"), logging.WARNING)


class TestRunConfigDefaults(unittest.TestCase):

    def test_frozen(self):
        config = RunConfig(dataset_root=Path("."), seed=0, prediction_dir=Path("."))
        with self.assertRaises(Exception):
            config.seed = 1
