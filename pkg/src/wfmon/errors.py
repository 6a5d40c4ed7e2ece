"""Exception hierarchy shared by all wfmon modules.

Every operational error raised by the library derives from :class:`WfmonError`;
the CLI maps those to exit status 1 and prints the class name.
"""


class WfmonError(Exception):
    """Base class for all library errors."""


# event model
class IllegalTransition(WfmonError):
    pass


class RunMismatch(WfmonError):
    pass


class UnknownSchemaVersion(WfmonError):
    pass


class UnknownTask(WfmonError):
    pass


# wire protocol / trace tables
class MalformedJson(WfmonError):
    pass


class MissingField(WfmonError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name


class UnknownKind(WfmonError):
    pass


class HeaderMissing(WfmonError):
    pass


class RaggedRow(WfmonError):
    def __init__(self, line_number, message=""):
        super().__init__(f"line {line_number}: {message}" if message else f"line {line_number}")
        self.line_number = line_number


# graph
class CycleIntroduced(WfmonError):
    def __init__(self, message, edges=()):
        super().__init__(message)
        self.edges = list(edges)


class CyclicGraph(WfmonError):
    pass


# wf-instance documents
class SchemaViolation(WfmonError):
    def __init__(self, path, message=""):
        super().__init__(f"{path}: {message}" if message else path)
        self.path = path


class InconsistentState(WfmonError):
    pass


# filesystem observer
class DirectoryMissing(WfmonError):
    pass


# node monitor
class SourceMissing(WfmonError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name


class ParseFailure(WfmonError):
    def __init__(self, name, line, message=""):
        super().__init__(f"{name}:{line}: {message}")
        self.name = name
        self.line = line


class DegenerateInterval(WfmonError):
    pass


class CounterRegression(WfmonError):
    pass


# wrapper-script injector
class CorruptMarkers(WfmonError):
    pass


class BinaryInput(WfmonError):
    pass


class InvalidPayload(WfmonError):
    pass
