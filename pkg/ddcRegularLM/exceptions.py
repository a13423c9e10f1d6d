# -*- encoding: utf-8 -*-
import sys
from datetime import datetime


class CustomBaseException(Exception):
    def __init__(self, msg):
        super().__init__(msg)
        self.msg = msg
        dt = datetime.now().strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3]
        sys.stderr.write(f"[{dt}]:[ERROR]:{repr(msg)}\n")

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self.msg)}


class AutomatonException(CustomBaseException):
    pass


class AutomatonFileException(AutomatonException):
    pass


class GenerationException(CustomBaseException):
    pass


class AnalysisException(CustomBaseException):
    pass


class NonTerminatingAutomatonException(AnalysisException):
    pass


class DatasetException(CustomBaseException):
    pass


class InfeasibleSplitException(DatasetException):
    pass


class RnnException(CustomBaseException):
    pass


class NonFiniteActivationException(RnnException):
    def __init__(self, msg, step: int):
        self.step = step
        super().__init__(msg)


class TrainingDivergenceException(RnnException):
    def __init__(self, msg, batch_index: int):
        self.batch_index = batch_index
        super().__init__(msg)


class EvaluationException(CustomBaseException):
    pass


class ScoreFileException(EvaluationException):
    pass


class RegressionException(CustomBaseException):
    pass


class ConstantPredictorException(RegressionException):
    def __init__(self, msg, columns: list[str]):
        self.columns = columns
        super().__init__(msg)


class RankDeficientDesignException(RegressionException):
    def __init__(self, msg, dependent_columns: list[str], dropped_columns: list[str]):
        self.dependent_columns = dependent_columns
        self.dropped_columns = dropped_columns
        super().__init__(msg)


class ExperimentException(CustomBaseException):
    pass


class StoreFetchAllException(CustomBaseException):
    pass


class StoreUpsertException(CustomBaseException):
    pass


class StoreDeleteAllException(CustomBaseException):
    pass


class StoreExecuteException(CustomBaseException):
    pass
