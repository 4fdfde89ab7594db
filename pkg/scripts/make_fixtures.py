"""Regenerate the synthetic input files under data/.

GDP per capita grows 2% a year with a mild cycle; the working-age share of
the population drifts upward; microdata are drawn from a lognormal income
model whose median rises and then falls with age. Deterministic (fixed seed).
"""

import math
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parent.parent / "data"
FIRST, LAST = 1880, 2015


def gdp_rows():
    for year in range(FIRST, LAST + 1):
        level = 3000.0 * math.exp(0.02 * (year - FIRST)) * (1 + 0.01 * math.sin(year / 3.0))
        yield f"{year},{level:.2f}"


def population_rows():
    for year in range(FIRST, LAST + 1):
        total = 60e6 * math.exp(0.012 * (year - FIRST))
        working = total * (0.68 + 0.10 * (year - FIRST) / (LAST - FIRST))
        yield f"{year},{total:.0f},{working:.0f}"


def microdata_rows(rng, years=(1962, 1990, 2014), per_year=1500):
    yield "year,age,income,gender,race,weight"
    for year in years:
        age = rng.integers(15, 86, size=per_year)
        gender = rng.choice(["M", "F"], size=per_year)
        race = rng.choice([100, 200], size=per_year, p=[0.85, 0.15])
        peak = 38 + 0.15 * (year - 1962)
        shape = np.exp(-((age - peak) / 22.0) ** 2)
        scale = np.where(gender == "M", 1.0, 0.6) * 30000 * math.exp(0.015 * (year - 1962))
        income = scale * shape * rng.lognormal(0.0, 0.6, size=per_year)
        weight = rng.uniform(500, 1500, size=per_year)
        for row in zip(age, income, gender, race, weight):
            yield f"{year},{row[0]},{row[1]:.2f},{row[2]},{row[3]},{row[4]:.1f}"


def main():
    DATA.mkdir(exist_ok=True)
    rng = np.random.default_rng(1962)
    (DATA / "gdp_synthetic.csv").write_text(
        "# synthetic real GDP per capita, arbitrary currency units\nyear,gdp_per_capita\n"
        + "\n".join(gdp_rows()) + "\n")
    (DATA / "population_synthetic.csv").write_text(
        "# synthetic population: total and aged 15 and over\nyear,total,working_age\n"
        + "\n".join(population_rows()) + "\n")
    (DATA / "microdata_sample.csv").write_text("\n".join(microdata_rows(rng)) + "\n")


if __name__ == "__main__":
    main()
