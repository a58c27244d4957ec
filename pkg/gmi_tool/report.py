from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from tabulate import tabulate


@dataclass
class EvalReport:
    """Per-run metric values of one evaluation task plus their aggregate."""

    task: str
    metric: str
    values: List[float]
    mean: float
    std: float
    config: Dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0
    seeds: List[int] = field(default_factory=list)

    @classmethod
    def from_values(
        cls,
        task: str,
        metric: str,
        values: Sequence[float],
        config: Optional[Dict[str, Any]] = None,
        seconds: float = 0.0,
        seeds: Optional[Sequence[int]] = None,
    ) -> "EvalReport":
        if not values:
            raise ValueError("an evaluation report needs at least one run")
        series = pd.Series(list(values), dtype="float64")
        return cls(
            task=task,
            metric=metric,
            values=[float(v) for v in series],
            mean=float(series.mean()),
            std=float(series.std(ddof=0)),
            config=dict(config or {}),
            seconds=float(seconds),
            seeds=[int(s) for s in seeds] if seeds is not None else list(range(len(series))),
        )

    @property
    def runs(self) -> int:
        return len(self.values)

    def to_table(self) -> str:
        rows = [[index, seed, f"{value:.4f}"] for index, (seed, value) in enumerate(zip(self.seeds, self.values))]
        table = tabulate(rows, headers=["Run", "Seed", self.metric], tablefmt="github")
        summary = f"{self.task} {self.metric}: {self.mean:.4f} ± {self.std:.4f} over {self.runs} runs ({self.seconds:.1f}s)"
        return f"{table}\n\n{summary}"

    def to_text(self) -> str:
        """Flat ``key = value`` report."""
        lines = [
            f"task = {self.task}",
            f"metric = {self.metric}",
            f"runs = {self.runs}",
            f"mean = {self.mean:.17g}",
            f"std = {self.std:.17g}",
            f"seconds = {self.seconds:.3f}",
        ]
        for key, value in sorted(self.config.items()):
            lines.append(f"config.{key} = {value}")
        for index, value in enumerate(self.values):
            lines.append(f"run.{index} = {value:.17g}")
        return "\n".join(lines) + "\n"

    def to_records(self) -> List[Dict[str, Any]]:
        records: List[Dict[str, Any]] = [
            {"type": "run", "task": self.task, "metric": self.metric, "run": index, "seed": seed, "value": value}
            for index, (seed, value) in enumerate(zip(self.seeds, self.values))
        ]
        records.append(
            {
                "type": "aggregate",
                "task": self.task,
                "metric": self.metric,
                "runs": self.runs,
                "mean": self.mean,
                "std": self.std,
                "seconds": self.seconds,
                "config": self.config,
            }
        )
        return records

    def to_json_lines(self) -> str:
        return "".join(json.dumps(record, sort_keys=True) + "\n" for record in self.to_records())

    def write(self, directory: str | Path) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        text_path = directory / f"{self.task}_report.txt"
        json_path = directory / f"{self.task}_report.jsonl"
        text_path.write_text(self.to_text(), encoding="utf-8")
        json_path.write_text(self.to_json_lines(), encoding="utf-8")
        return {"text": text_path, "json": json_path}


@dataclass
class PropertyResult:
    name: str
    passed: bool
    checked: int
    seed: int
    detail: str = ""
    skipped: bool = False


@dataclass
class VerifyReport:
    results: List[PropertyResult] = field(default_factory=list)
    extremal: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[PropertyResult]:
        return [r for r in self.results if not r.passed]

    def add(self, result: PropertyResult) -> None:
        self.results.append(result)

    def to_table(self) -> str:
        if not self.results:
            return "No properties checked."
        rows = []
        for result in self.results:
            status = "SKIP" if result.skipped else ("PASS" if result.passed else "FAIL")
            rows.append([result.name, status, result.checked, result.seed, result.detail])
        return tabulate(rows, headers=["Property", "Status", "Checked", "Seed", "Detail"], tablefmt="github")

    def to_records(self) -> List[Dict[str, Any]]:
        records: List[Dict[str, Any]] = [
            {
                "type": "property",
                "name": r.name,
                "passed": r.passed,
                "skipped": r.skipped,
                "checked": r.checked,
                "seed": r.seed,
                "detail": r.detail,
            }
            for r in self.results
        ]
        records.append({"type": "aggregate", "passed": self.passed, "extremal": self.extremal})
        return records

    def to_json_lines(self) -> str:
        return "".join(json.dumps(record, sort_keys=True) + "\n" for record in self.to_records())
