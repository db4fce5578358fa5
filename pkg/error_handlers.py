"""
Error handling for the heat-ring pipeline
Exception hierarchy with stable codes, and the handler that turns them into
machine-readable error JSON plus a process exit code
"""

import json
import logging
import sys
import traceback

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3
EXIT_INSUFFICIENT_HISTORY = 4


class HeatRingError(Exception):
    """Base error: carries a stable code and the exit code the CLI should use"""
    code = 'error'
    exit_code = EXIT_FAILURE

    def __init__(self, message, field=None, **details):
        self.message = message
        self.field = field
        self.details = details
        super().__init__(self.message)

    def to_dict(self):
        payload = {
            'error': self.code,
            'message': self.message,
            'field': self.field,
            'exit_code': self.exit_code,
        }
        payload.update(self.details)
        return payload


class ValidationError(HeatRingError):
    """Invalid value, schema violation or domain invariant broken"""
    code = 'validation'
    exit_code = EXIT_VALIDATION


class ParseError(ValidationError):
    """Malformed file content; names the file position"""
    code = 'parse'

    def __init__(self, message, path=None, line=None, column=None):
        location = f"{path}:{line}" if path else f"line {line}"
        if column is not None:
            location += f":{column}"
        super().__init__(f"{location}: {message}", field=None,
                         path=str(path) if path else None, line=line, column=column)
        self.line = line
        self.column = column


class SpecMismatchError(ValidationError):
    code = 'spec-mismatch'


class TimelineOrderError(ValidationError):
    code = 'timeline-order'


class TimelineGapError(ValidationError):
    code = 'timeline-gap'


class SiteRegistryError(ValidationError):
    code = 'site-registry'


class GridDimensionError(ValidationError):
    code = 'grid-dimension'


class UsageError(ValidationError):
    code = 'usage'


class GridIndexError(HeatRingError, IndexError):
    code = 'grid-index'


class MissingInputError(HeatRingError):
    code = 'missing-input'
    exit_code = EXIT_MISSING_INPUT


class MissingPeriodError(MissingInputError):
    code = 'missing-period'


class InsufficientHistoryError(HeatRingError):
    code = 'insufficient-history'
    exit_code = EXIT_INSUFFICIENT_HISTORY


class EmptyRingError(HeatRingError):
    code = 'empty-ring'


class UndefinedMetricsError(HeatRingError):
    code = 'undefined-metrics'


def schema_error(error, prefix=None):
    """Convert a marshmallow ValidationError into ours, naming the first offending field"""
    messages = error.messages
    path = []
    while isinstance(messages, dict) and messages:
        key = sorted(messages, key=str)[0]
        path.append(str(key))
        messages = messages[key]
    if isinstance(messages, list) and messages:
        detail = messages[0]
        while isinstance(detail, (list, dict)) and detail:
            detail = detail[0] if isinstance(detail, list) else next(iter(detail.values()))
    else:
        detail = str(messages)
    field_name = '.'.join(path) or None
    if prefix and field_name:
        field_name = f"{prefix}.{field_name}"
    return ValidationError(f"Invalid field {field_name}: {detail}", field=field_name)


class ErrorHandler:
    """Centralized error handling for the command line surface"""

    def __init__(self, stream=None):
        self.stream = stream

    def handle(self, error):
        """Log the error, emit its JSON payload and return the exit code"""
        if isinstance(error, HeatRingError):
            payload = error.to_dict()
            if error.exit_code == EXIT_MISSING_INPUT:
                logger.warning(f"Missing input: {error.message}")
            else:
                logger.error(f"{error.code}: {error.message}")
        else:
            payload = {
                'error': 'unexpected',
                'message': str(error) or error.__class__.__name__,
                'field': None,
                'exit_code': EXIT_FAILURE,
            }
            logger.error(f"Unexpected error: {error}")
            logger.error(f"Traceback: {traceback.format_exc()}")
        stream = self.stream or sys.stderr
        stream.write(json.dumps(payload, sort_keys=True) + '\n')
        stream.flush()
        return payload['exit_code']
