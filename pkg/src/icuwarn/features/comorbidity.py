"""Charlson (Deyo weights) and Elixhauser (van Walraven weights) indices.

Both tables map ICD-10 prefixes (dots stripped) to categories. A category is
counted at most once however many of its codes appear; a code may belong to
more than one category.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable


@dataclass(frozen=True)
class WeightTable:
    name: str
    weights: dict[str, int]              # category -> weight
    prefixes: dict[str, tuple[str, ...]]  # category -> ICD-10 prefixes

    def categories_of(self, code: str) -> set[str]:
        norm = normalize_icd10(code)
        return {cat for cat, pfx in self.prefixes.items() if norm.startswith(pfx)}

    def categories(self, codes: Iterable[str]) -> set[str]:
        found: set[str] = set()
        for code in codes:
            found |= self.categories_of(code)
        return found


def normalize_icd10(code: str) -> str:
    return code.strip().replace(".", "").upper()


def _load(filename: str) -> WeightTable:
    text = resources.files("icuwarn.features").joinpath("data", filename).read_text()
    weights, prefixes = {}, {}
    for row in csv.DictReader(text.splitlines()):
        weights[row["category"]] = int(row["weight"])
        prefixes[row["category"]] = tuple(row["icd10_prefixes"].split())
    return WeightTable(filename.split(".")[0], weights, prefixes)


@lru_cache(maxsize=None)
def charlson_table() -> WeightTable:
    return _load("charlson_deyo.csv")


@lru_cache(maxsize=None)
def elixhauser_vw_table() -> WeightTable:
    return _load("elixhauser_vw.csv")


def charlson(diagnoses: Iterable[str], table: WeightTable | None = None) -> int:
    """Charlson comorbidity score; unknown codes contribute nothing."""
    table = table or charlson_table()
    return sum(table.weights[c] for c in table.categories(diagnoses))


def elixhauser_vw(diagnoses: Iterable[str], table: WeightTable | None = None) -> int:
    """van Walraven-weighted Elixhauser score. May be negative."""
    table = table or elixhauser_vw_table()
    return sum(table.weights[c] for c in table.categories(diagnoses))
