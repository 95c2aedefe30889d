import configparser
import importlib.resources
import os
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

from thermosmolu.config.exceptions import (
    ConfigError,
    ConfigFileNotFound,
    ConsistencyError,
    SchemaError,
)
from thermosmolu.config.path_reference import eval_config_reference
from thermosmolu.configuration import (
    ThermosmoluConfig,
    apply_overrides,
    create_example_config,
    load_config,
    parse_config,
    validate_config_values,
)
from thermosmolu.diagnostics import ObserverKind, Severity
from thermosmolu.initial import FieldKind
from thermosmolu.tests.mock_config import mock_config
from thermosmolu.timestepper import Problem, Scheme


class TestThermosmoluConfig(TestCase):
    """
    Tests for loading the packaged defaults and user configuration files
    """

    tempdir = None
    cwd = None

    def setUp(self) -> None:
        self.cwd = os.getcwd()
        self.tempdir = TemporaryDirectory()
        os.chdir(self.tempdir.name)

    def tearDown(self) -> None:
        if self.tempdir:
            assert self.cwd
            os.chdir(self.cwd)
            self.tempdir.cleanup()
            self.tempdir = None

    def test_defaults__all_sections_present(self) -> None:
        instance = ThermosmoluConfig()
        for section in ["grid", "model", "scheme", "initial", "run", "study"]:
            self.assertIn(section, instance.sections())

    def test_defaults__validate(self) -> None:
        config = validate_config_values(ThermosmoluConfig())
        self.assertEqual(config.grid.cells, (101,))
        self.assertEqual(config.params.problem, Problem.P)
        self.assertEqual(config.scheme.scheme, Scheme.IMEX)
        # dt = auto with a 0.5 advisory is capped by dt_cap
        self.assertTrue(config.dt_auto)
        self.assertEqual(config.scheme.dt, 1e-3)
        self.assertEqual(config.dt_advisory, 0.5)
        self.assertEqual(config.out, Path("runs/imex"))
        self.assertEqual(config.observers, ())

    def test_user_file_overrides_defaults(self) -> None:
        Path("test.conf").write_text("[model]\nspecies = 3\n\n[scheme]\ndt = 0.01\n")
        config = load_config(Path("test.conf"))
        self.assertEqual(config.params.n_species, 3)
        self.assertEqual(config.params.kappa_i, (1.0, 1.0, 1.0))
        self.assertEqual(config.scheme.dt, 0.01)
        self.assertFalse(config.dt_auto)

    def test_missing_file(self) -> None:
        with self.assertRaises(ConfigFileNotFound):
            ThermosmoluConfig(Path("missing.conf"))

    def test_malformed_file(self) -> None:
        Path("broken.conf").write_text("[grid\ndim = 1\n")
        with self.assertRaises(SchemaError):
            ThermosmoluConfig(Path("broken.conf"))

    def test_options_keep_their_case(self) -> None:
        instance = mock_config("[run]\nT = 2.5\n")
        self.assertIn("T", instance.options("run"))

    def test_create_example_config(self) -> None:
        create_example_config(Path("thermosmolu.conf"))
        config = load_config(Path("thermosmolu.conf"))
        self.assertEqual(config.grid.dim, 2)
        self.assertEqual(config.params.n_species, 2)
        self.assertEqual(config.out, Path("runs/eps0.1/imex"))

    def test_example_config_validates(self) -> None:
        example = Path(str(importlib.resources.files("thermosmolu") / "example.conf"))
        config = load_config(example)
        self.assertEqual(config.initial.species[1].kind, FieldKind.GAUSSIAN)
        self.assertEqual(config.params.beta.beta[0][1], 0.5)
        kinds = [spec.kind for spec in config.observers]
        self.assertIn(ObserverKind.ENVELOPE, kinds)


class TestValidateConfigValues(TestCase):
    def assertConfigError(
        self, contents: str, error: type[ConfigError], message: str = ""
    ) -> None:
        with self.assertRaisesRegex(error, message):
            validate_config_values(mock_config(contents))

    def test_asymmetric_beta(self) -> None:
        self.assertConfigError(
            "[model]\nspecies = 2\nbeta = 1, 2; 0.5, 1\n",
            ConsistencyError,
            r"beta\[1\]\[2\]",
        )

    def test_beta_shape(self) -> None:
        self.assertConfigError(
            "[model]\nspecies = 3\nbeta = 1, 0.5; 0.5, 1\n", ConsistencyError
        )
        self.assertConfigError("[model]\nspecies = 2\nbeta = 1, 0.5; 1\n", SchemaError)
        self.assertConfigError("[model]\nbeta = -1\n", SchemaError)

    def test_negative_kappa(self) -> None:
        self.assertConfigError(
            "[model]\nkappa = -1\n", SchemaError, "kappa must be positive"
        )

    def test_bad_values(self) -> None:
        cases = [
            "[grid]\ndim = 4\n",
            "[grid]\ncells = 2\n",
            "[grid]\nextents = zero\n",
            "[model]\ndelta0 = 0\n",
            "[model]\ntau = -0.5\n",
            "[model]\nspecies = 0\n",
            "[scheme]\nscheme = rk4\n",
            "[scheme]\ndt = -1\n",
            "[scheme]\nclamp_negative = maybe\n",
            "[run]\nT = nan\n",
            "[run]\nsnapshot_format = hdf5\n",
            "[run]\nout = \n",
            "[initial]\ntheta.kind = square\n",
            "[initial]\ntheta.kind = cosine\ntheta.width = 0.1\n",
        ]
        for contents in cases:
            with self.subTest(contents=contents):
                self.assertConfigError(contents, SchemaError)

    def test_unknown_sections_and_options(self) -> None:
        self.assertConfigError("[grid]\nspacing = 0.1\n", SchemaError, "spacing")
        self.assertConfigError("[solver]\ntol = 1e-8\n", SchemaError, "solver")
        self.assertConfigError("[observer.entropy]\n", SchemaError, "entropy")
        self.assertConfigError("[observer.norms]\nevery = 2\n", SchemaError, "every")
        self.assertConfigError("[initial]\nv.kind = constant\n", SchemaError)

    def test_per_species_lengths(self) -> None:
        self.assertConfigError(
            "[model]\nspecies = 2\nkappa_i = 1, 2, 3\n",
            ConsistencyError,
            "kappa_i has 3 entries",
        )
        self.assertConfigError(
            "[grid]\ndim = 2\ncells = 3, 4, 5\n", ConsistencyError, "cells"
        )

    def test_species_index_out_of_range(self) -> None:
        self.assertConfigError(
            "[model]\nspecies = 2\n\n[initial]\nu3.kind = constant\n",
            ConsistencyError,
            "u3",
        )

    def test_initial_overrides(self) -> None:
        config = parse_config(
            """
[model]
species = 3

[initial]
theta.kind = gaussian
theta.centre = 0.25
u.kind = random
u.offset = 0.5
u2.amplitude = 0.1
u3.kind = constant
u3.value = 0.3
"""
        )
        theta, (u1, u2, u3) = config.initial.theta, config.initial.species
        self.assertEqual(theta.kind, FieldKind.GAUSSIAN)
        self.assertEqual(theta.params["centre"], 0.25)
        self.assertEqual(u1.resolved()["offset"], 0.5)
        self.assertEqual(u2.resolved()["offset"], 0.5)
        self.assertEqual(u2.resolved()["amplitude"], 0.1)
        self.assertEqual(u3.kind, FieldKind.CONSTANT)
        self.assertEqual(u3.resolved()["value"], 0.3)

    def test_observers(self) -> None:
        config = parse_config(
            """
[observer.norms]
stride = 5

[observer.envelope]
severity = soft
tolerance = 1e-4

[observer.positivity]
"""
        )
        norms, envelope, positivity = config.observers
        self.assertEqual(norms.stride, 5)
        self.assertEqual(envelope.severity, Severity.SOFT)
        self.assertEqual(envelope.tolerance, 1e-4)
        self.assertEqual(positivity.severity, Severity.HARD)
        self.assertEqual(positivity.tolerance, 1e-8)
        self.assertConfigError("[observer.norms]\nstride = 0\n", SchemaError)
        self.assertConfigError("[observer.norms]\nseverity = fatal\n", SchemaError)

    def test_n_clamp(self) -> None:
        self.assertIsNone(parse_config("").params.n_clamp)
        self.assertEqual(parse_config("[model]\nn_clamp = 5\n").params.n_clamp, 5.0)

    def test_envelope_dt(self) -> None:
        self.assertEqual(parse_config("[model]\nbeta = 4\n").envelope_dt, 2.5e-4)
        self.assertEqual(parse_config("[run]\nenvelope_dt = 0.01\n").envelope_dt, 0.01)

    def test_out_references(self) -> None:
        config = parse_config(
            "[model]\nepsilon = 0.05\n\n"
            + "[run]\nout = eps{{ model_epsilon }}/{{ scheme_dt_cap }}\n"
        )
        self.assertEqual(config.out, Path("eps0.05/1e-3"))
        self.assertConfigError(
            "[run]\nout = runs/{{ model_nope }}\n", SchemaError, "nope"
        )

    def test_apply_overrides(self) -> None:
        config = mock_config("")
        apply_overrides(
            config, {"scheme": {"scheme": "picard", "dt": None}, "run": {"T": 2}}
        )
        self.assertEqual(config.get("scheme", "scheme"), "picard")
        self.assertEqual(config.get("scheme", "dt"), "auto")
        self.assertEqual(config.get("run", "T"), "2")

    def test_as_dict_is_complete(self) -> None:
        config = parse_config("[observer.norms]\n")
        resolved = config.as_dict()
        self.assertEqual(
            set(resolved), {"grid", "model", "scheme", "initial", "run", "observers"}
        )
        self.assertEqual(resolved["scheme"]["dt"], 1e-3)
        self.assertEqual(resolved["model"]["n_clamp"], "off")
        self.assertEqual(
            resolved["initial"]["theta"], {"kind": "constant", "value": 1.0}
        )
        self.assertEqual(resolved["observers"][0]["kind"], "norms")
        defaults = ThermosmoluConfig()
        for section in ("grid", "model", "scheme"):
            with self.subTest(section=section):
                for option in defaults.options(section):
                    if option != "dt_cap":
                        self.assertIn(option, resolved[section])


class TestPathReference(TestCase):
    def test_valid_references(self) -> None:
        cases = [
            ({"run": {"dir": "/test", "out": r"{{run_dir}}"}}, "/test"),
            ({"run": {"dir": "/test", "out": r"{{ run_dir }}"}}, "/test"),
            ({"run": {"dir": "/test", "out": r"{{ run_dir }}/eps"}}, "/test/eps"),
            (
                {
                    "model": {"epsilon": "0.1"},
                    "scheme": {"scheme": "picard"},
                    "run": {"out": r"runs/{{ model_epsilon }}-{{ scheme_scheme }}"},
                },
                "runs/0.1-picard",
            ),
            (
                {
                    "initial": {"theta.kind": "cosine"},
                    "run": {"out": r"runs/{{ initial_theta.kind }}"},
                },
                "runs/cosine",
            ),
        ]
        for cfg_data, expected in cases:
            with self.subTest(out=cfg_data["run"]["out"], expected=expected):
                cfg = configparser.ConfigParser()
                cfg.read_dict(cfg_data)
                self.assertEqual(
                    eval_config_reference(cfg, cfg_data["run"]["out"]), expected
                )

    def test_invalid_references(self) -> None:
        cases = [
            (
                r"{{ missing.underscore }}/foo",
                "Unable to parse config option reference",
            ),
            (r"/var/{{ run_woops }}/foo", "No option 'woops' in section: 'run'"),
            (r"/var/{{ nowhere_out }}/foo", "No section: 'nowhere'"),
        ]
        for out, expected_error in cases:
            with self.subTest(out=out, expected_error=expected_error):
                cfg = configparser.ConfigParser()
                cfg.read_dict({"run": {"out": out}})
                self.assertRaisesRegex(
                    ValueError, expected_error, eval_config_reference, cfg, out
                )


if __name__ == "__main__":
    unittest.main()
