from nomad.config.models.plugins import SchemaPackageEntryPoint
from pydantic import Field


class ExplorationRunSchemaEntryPoint(SchemaPackageEntryPoint):
    final_fraction: float = Field(
        0.1, gt=0, le=1, description='Share of final episodes averaged into G.'
    )
    early_fraction: float = Field(
        0.1, gt=0, le=1, description='Share of first episodes averaged into the early score.'
    )

    def load(self):
        from nomad_adaptive_exploration.schema_packages.schema_package import m_package

        return m_package


exploration_run_schema = ExplorationRunSchemaEntryPoint(
    name='exploration_run_schema',
    description='Schema for run logs of bandit-adapted exploration experiments.',
)
