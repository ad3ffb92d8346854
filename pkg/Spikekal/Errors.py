from typing import Optional


class SpikekalError(Exception):
    pass


class ContractViolation(SpikekalError, ValueError):
    # 维度不匹配 / 前置条件不满足
    pass


class ModelValidationError(SpikekalError):
    pass


class NumericalError(SpikekalError):
    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition

    def __str__(self):
        base = super().__str__()
        if self.condition is None:
            return base
        return f"{base} (condition number ~ {self.condition:.3e})"


class ConfigError(SpikekalError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line

    def __str__(self):
        parts = [super().__str__()]
        if self.key is not None:
            parts.append(f"key '{self.key}'")
        if self.line is not None:
            parts.append(f"line {self.line}")
        return ', '.join(parts)


class CsvFormatError(SpikekalError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        if self.line is None:
            return super().__str__()
        return f"line {self.line}: {super().__str__()}"
