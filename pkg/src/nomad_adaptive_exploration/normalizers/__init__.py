from nomad.config.models.plugins import NormalizerEntryPoint
from pydantic import Field


class ExplorationRunNormalizerEntryPoint(NormalizerEntryPoint):
    publish_tags: bool = Field(
        True, description='Publish run descriptors as ELN tags for search.'
    )

    def load(self):
        from nomad_adaptive_exploration.normalizers.normalizer import (
            ExplorationRunNormalizer,
        )

        return ExplorationRunNormalizer(**self.model_dump())


exploration_run_normalizer = ExplorationRunNormalizerEntryPoint(
    name='exploration_run_normalizer',
    description='Adds variant, selector and modulation set tags to exploration runs.',
)
