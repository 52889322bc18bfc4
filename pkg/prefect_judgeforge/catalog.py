"""The scenario catalog: scenarios, their judge criteria and seed instructions."""
import json
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, validator

from prefect_judgeforge.exceptions import UnknownScenario
from prefect_judgeforge.models import DEFAULT_SCENARIO_ID, Scenario

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_CATALOG_PATH = DATA_DIR / "scenarios.json"
DEFAULT_SEEDS_PATH = DATA_DIR / "seed_instructions.json"


def normalize_name(name: str) -> str:
    """Collapses whitespace and case so scenario names compare verbatim."""
    return " ".join(name.split()).casefold()


class ScenarioCatalog(BaseModel):
    """Ordered collection of scenarios.

    Attributes:
        scenarios: Scenarios in catalog order.

    Example:
        Resolve a scenario from the packaged catalog:
        ```python
        from prefect_judgeforge.catalog import ScenarioCatalog

        catalog = ScenarioCatalog.load()
        math = catalog.get("math_qa")
        print([criterion.name for criterion in math.criteria])
        ```
    """

    scenarios: List[Scenario]

    @validator("scenarios")
    def _ids_unique(cls, scenarios):
        seen = set()
        for scenario in scenarios:
            if scenario.id == DEFAULT_SCENARIO_ID:
                raise ValueError(f"Scenario id {DEFAULT_SCENARIO_ID!r} is reserved.")
            if scenario.id in seen:
                raise ValueError(f"Duplicate scenario id {scenario.id!r}.")
            seen.add(scenario.id)
        return scenarios

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "ScenarioCatalog":
        """Reads a catalog JSON file; defaults to the packaged ten-scenario catalog."""
        path = Path(path) if path else DEFAULT_CATALOG_PATH
        return cls.parse_obj(json.loads(path.read_text(encoding="utf-8")))

    def dump(self, path: Union[str, Path]) -> None:
        """Writes the catalog, aliases included, as JSON."""
        Path(path).write_text(
            json.dumps(self.dict(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @property
    def ids(self) -> List[str]:
        return [scenario.id for scenario in self.scenarios]

    def is_empty(self) -> bool:
        return not self.scenarios

    def get(self, scenario_id: str) -> Scenario:
        """
        Looks a scenario up by id.

        Raises:
            UnknownScenario: If no scenario carries `scenario_id`.
        """
        for scenario in self.scenarios:
            if scenario.id == scenario_id:
                return scenario
        raise UnknownScenario(
            f"Unknown scenario {scenario_id!r}. Must be one of {self.ids}."
        )

    def find_by_name(self, name: str) -> Optional[Scenario]:
        wanted = normalize_name(name)
        for scenario in self.scenarios:
            if normalize_name(scenario.name) == wanted:
                return scenario
        return None

    def replace(self, scenario: Scenario) -> "ScenarioCatalog":
        """Returns a copy with the scenario of the same id swapped in."""
        self.get(scenario.id)
        return ScenarioCatalog(
            scenarios=[
                scenario if existing.id == scenario.id else existing
                for existing in self.scenarios
            ]
        )

    @property
    def criteria_count(self) -> int:
        return sum(len(scenario.criteria) for scenario in self.scenarios)


def load_seed_instructions(
    path: Optional[Union[str, Path]] = None
) -> Dict[str, List[str]]:
    """Reads the per-scenario seed instructions used as questioning examples."""
    path = Path(path) if path else DEFAULT_SEEDS_PATH
    return json.loads(path.read_text(encoding="utf-8"))
