"""Error types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario, pipeline, or experiment configuration."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (wrong domain state, bad shape)."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the requested operation (zero codeword, zero channel,
    collapsed normalization range)."""


class DatasetError(RuntimeError):
    """Dataset directory, manifest, or binary payload is unusable."""


class StageError(RuntimeError):
    """A pipeline stage of an experiment run failed. Carries the stage tag."""

    def __init__(self, stage, message):
        super().__init__(f"[stage:{stage}] {message}")
        self.stage = stage


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""
