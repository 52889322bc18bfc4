"""
Builds index.md from README.md and appends the packaged scenario catalog.
"""

from pathlib import Path

import mkdocs_gen_files
from tabulate import tabulate

from prefect_judgeforge.catalog import ScenarioCatalog

readme_path = Path("README.md")
docs_index_path = Path("index.md")

catalog = ScenarioCatalog.load()
rows = [
    [scenario.id, scenario.name, ", ".join(scenario.criterion_names)]
    for scenario in catalog.scenarios
]

with open(readme_path, "r") as readme:
    with mkdocs_gen_files.open(docs_index_path, "w") as generated_file:
        for line in readme:
            if line.startswith("Visit the full docs [here]("):
                continue  # prevent linking to itself
            generated_file.write(line)
        generated_file.write("\n## Packaged scenarios\n\n")
        generated_file.write(
            tabulate(rows, headers=["Id", "Name", "Criteria"], tablefmt="github")
        )
        generated_file.write("\n")

    mkdocs_gen_files.set_edit_path(Path(docs_index_path), readme_path)
