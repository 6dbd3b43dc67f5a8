"""Shared fixtures.

Expensive artifacts live in two tiers. Outputs of the shipped configs
(training tables, surrogates, LOOCV tables) are built once through the
CLI into runs/, so the tests double as end-to-end runs of the documented
pipeline. Derived values only the tests need (oracle powers, wide-sample
assurance reports) are cached as JSON under .acceptance_cache/. Delete
either directory to force a clean rebuild.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from seqoc.bart import load_bart
from seqoc.cli import main as cli_main
from seqoc.design_space import training_set_from_csv
from seqoc.models import load_model_spec
from seqoc.oc import load_design

PKG_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = PKG_ROOT / "configs"
RUNS_DIR = PKG_ROOT / "runs"
CACHE_DIR = PKG_ROOT / ".acceptance_cache"


def run_cli(*argv) -> int:
    return cli_main([str(a) for a in argv])


def build_if_missing(target: Path, command: str, config_name: str) -> Path:
    if not target.exists():
        rc = run_cli(command, "--config", CONFIG_DIR / config_name)
        if rc != 0 or not target.exists():
            raise RuntimeError(f"seqoc {command} --config {config_name} failed (exit {rc})")
    return target


@pytest.fixture(scope="session")
def logistic_spec():
    return load_model_spec(CONFIG_DIR / "model_logistic.json")


@pytest.fixture(scope="session")
def survival_spec():
    return load_model_spec(CONFIG_DIR / "model_survival.json")


@pytest.fixture(scope="session")
def d1():
    return load_design(CONFIG_DIR / "design_d1.json")


@pytest.fixture(scope="session")
def d2():
    return load_design(CONFIG_DIR / "design_d2.json")


@pytest.fixture(scope="session")
def train_logistic_csv():
    return build_if_missing(RUNS_DIR / "train_logistic.csv", "train", "train_logistic.json")


@pytest.fixture(scope="session")
def train_logistic(train_logistic_csv):
    return training_set_from_csv(train_logistic_csv)


@pytest.fixture(scope="session")
def surrogate_logistic_path(train_logistic_csv):
    return build_if_missing(RUNS_DIR / "surrogate_logistic.json", "fit", "fit_logistic.json")


@pytest.fixture(scope="session")
def surrogate_logistic(surrogate_logistic_path):
    return load_bart(surrogate_logistic_path)


@pytest.fixture(scope="session")
def loocv_logistic_csv(train_logistic_csv):
    return build_if_missing(RUNS_DIR / "loocv_logistic.csv", "loocv", "loocv_logistic.json")


@pytest.fixture(scope="session")
def loocv_logistic(loocv_logistic_csv):
    """LOOCV table as named columns."""
    import csv

    with open(loocv_logistic_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    return {name: np.array([float(r[j]) for r in data]) for j, name in enumerate(header)}


@pytest.fixture(scope="session")
def train_survival_csv():
    return build_if_missing(RUNS_DIR / "train_survival.csv", "train", "train_survival.json")


@pytest.fixture(scope="session")
def train_survival(train_survival_csv):
    return training_set_from_csv(train_survival_csv)


@pytest.fixture(scope="session")
def surrogate_survival_path(train_survival_csv):
    return build_if_missing(RUNS_DIR / "surrogate_survival.json", "fit", "fit_survival.json")


@pytest.fixture(scope="session")
def surrogate_survival(surrogate_survival_path):
    return load_bart(surrogate_survival_path)


@pytest.fixture(scope="session")
def cached():
    """JSON memo under .acceptance_cache/, keyed by name."""
    CACHE_DIR.mkdir(exist_ok=True)

    def get(name: str, build):
        path = CACHE_DIR / f"{name}.json"
        if path.exists():
            return json.loads(path.read_text())
        value = build()
        path.write_text(json.dumps(value, indent=2, sort_keys=True) + "\n")
        return value

    return get


ORACLE_POWER_N = 500
ORACLE_POWER_U = 0.975
ORACLE_POWER_NSIM = 400


@pytest.fixture(scope="session")
def oracle_power_logistic(cached, train_logistic, logistic_spec):
    """Brute-force fixed-design power at each logistic training point."""

    def build():
        from seqoc.oracle import OracleConfig, mc_power_fixed

        power, se = [], []
        for i, theta in enumerate(train_logistic.points):
            rep = mc_power_fixed(
                ORACLE_POWER_N,
                ORACLE_POWER_U,
                logistic_spec,
                OracleConfig(nsim=ORACLE_POWER_NSIM, seed=9200 + i),
                theta=theta,
            )
            power.append(rep.assurance)
            se.append(rep.se_assurance)
        return {
            "n": ORACLE_POWER_N,
            "u": ORACLE_POWER_U,
            "nsim": ORACLE_POWER_NSIM,
            "power": power,
            "se": se,
        }

    return cached("oracle_power_logistic_40", build)
