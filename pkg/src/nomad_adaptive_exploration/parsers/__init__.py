from nomad.config.models.plugins import ParserEntryPoint
from pydantic import Field


class RunLogParserEntryPoint(ParserEntryPoint):
    read_config: bool = Field(
        True, description='Read the config.yaml stored next to a run log, if any.'
    )

    def load(self):
        from nomad_adaptive_exploration.parsers.parser import RunLogParser

        return RunLogParser(**self.model_dump())


run_log_parser = RunLogParserEntryPoint(
    name='RunLogParser',
    description='Parser for per-seed run logs written by adaptive-exploration.',
    mainfile_name_re=r'.*log\.csv$',
    mainfile_contents_re=r'^episode,env_steps,variant,seed,fitness,eval_return,horizon',
)
