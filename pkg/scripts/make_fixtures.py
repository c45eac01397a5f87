"""Regenerate the bundled price fixtures and default config files.

Run from the repository root:  python3 scripts/make_fixtures.py
"""

import configparser
from pathlib import Path

from wattbench.cli import _DEFAULTS
from wattbench.core import parse_utc
from wattbench.modbus.registers import DEFAULT_REGISTER_MAP, save_register_map
from wattbench.prices import save_fixture, synthetic_belpex, two_tier_day

ROOT = Path(__file__).resolve().parent.parent
START = parse_utc("2023-06-01T00:00:00Z")


def main() -> None:
    fixtures = ROOT / "fixtures"
    fixtures.mkdir(exist_ok=True)
    save_fixture(two_tier_day(START), fixtures / "two_tier_day.csv")
    save_fixture(synthetic_belpex(START, days=4, seed=7), fixtures / "two_peak_4day.csv")
    save_fixture(
        synthetic_belpex(parse_utc("2023-01-01T00:00:00Z"), days=365, seed=2023),
        fixtures / "belpex_2023.csv",
    )

    configs = ROOT / "configs"
    configs.mkdir(exist_ok=True)
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in _DEFAULTS.items():
        parser[section] = dict(values)
    with open(configs / "default.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)
    save_register_map(DEFAULT_REGISTER_MAP, configs / "register_map.ini")
    print("wrote fixtures/ and configs/")


if __name__ == "__main__":
    main()
