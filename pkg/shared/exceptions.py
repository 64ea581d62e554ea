class ElmmError(Exception):
    pass


class InvalidArgumentError(ElmmError, ValueError):
    pass


class DatasetIntegrityError(ElmmError):
    pass


class CheckpointFormatError(ElmmError):
    pass


class RankingInternalError(ElmmError):
    pass


class ConfigError(ElmmError):

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path
        self.message = message


class TrainingDivergedError(ElmmError):

    def __init__(self, epoch: int, step: int, last_finite_loss: float | None):
        super().__init__(
            f"loss became non-finite at epoch {epoch}, step {step} "
            f"(last finite loss: {last_finite_loss})"
        )
        self.epoch = epoch
        self.step = step
        self.last_finite_loss = last_finite_loss
