"""
    Typed errors raised across gprforge.
"""


class GprForgeException(Exception):
    """Base error. `subject` names the offending field, directive, file or
    index; `line` is the 1-based source line when the error comes from a
    text file."""

    template = "{subject}"

    def __init__(self, subject=None, reason=None, line=None):
        self.subject = subject
        self.line = line
        if reason is None:
            reason = self.template.format(subject=subject)
        self.reason = reason
        super().__init__(reason)

    @property
    def code(self) -> str:
        return type(self).__name__

    def __str__(self):
        """Custom error messages for exception"""
        error_message = "({0})\n" "Reason: {1}\n".format(self.code, self.reason)
        if self.line is not None:
            error_message += "Line: {0}\n".format(self.line)

        return error_message


# scene


class SceneError(GprForgeException):
    pass


class UnknownDirective(SceneError):
    template = "unknown directive '#{subject}'"


class MissingRequiredDirective(SceneError):
    template = "missing required directive '#{subject}'"


class DuplicateDirective(SceneError):
    template = "directive '#{subject}' given more than once"


class BadArity(SceneError):
    template = "wrong number of arguments for '#{subject}'"


class BadNumber(SceneError):
    template = "not a number: '{subject}'"


class MalformedDirective(SceneError):
    template = "cannot parse line: {subject}"


class OutOfRangeValue(SceneError):
    template = "value out of range for field '{subject}'"


class DanglingMaterialRef(SceneError):
    template = "material '{subject}' is not defined"


class ObjectOutsideDomain(SceneError):
    template = "object {subject} lies outside the domain"


class SceneDecodeError(SceneError):
    template = "input is not valid UTF-8"


# fdtd


class NumericalBlowup(GprForgeException):
    def __init__(self, step, trace_index=None, value=None):
        self.step = step
        self.trace_index = trace_index
        self.value = value
        where = "" if trace_index is None else f" in trace {trace_index}"
        super().__init__(
            subject=trace_index,
            reason=f"field magnitude {value} exceeded limit at step {step}{where}",
        )


class PointOutsideGrid(GprForgeException):
    template = "antenna point {subject} is not inside the simulated domain"


# radargram and file formats


class BadWindow(GprForgeException):
    template = "window must be odd and >= 3, got {subject}"


class TooFewTraces(GprForgeException):
    template = "need at least 2 traces, got {subject}"


class BadGain(GprForgeException):
    template = "gain coefficient must be >= 0, got {subject}"


class EmptySelection(GprForgeException):
    template = "trace selection is empty or out of bounds: {subject}"


class LengthMismatch(GprForgeException):
    template = "length mismatch: {subject}"


class DegenerateRange(GprForgeException):
    template = "amplitude range is degenerate (min == max == {subject})"


class FormatError(GprForgeException):
    pass


class BadMagic(FormatError):
    template = "bad magic {subject!r}"


class UnsupportedVersion(FormatError):
    template = "unsupported format version {subject}"


class TruncatedFile(FormatError):
    template = "file is truncated: {subject}"


class TrailingData(FormatError):
    template = "unexpected trailing bytes: {subject}"


class BadHeader(FormatError):
    template = "malformed header: {subject}"


class BadPayload(FormatError):
    template = "malformed payload: {subject}"


# annotate


class ObjectNotImageable(GprForgeException):
    template = "object {subject} is not visible inside the time window"


class GenerationError(GprForgeException):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(subject=index, reason=f"image {index}: {cause.reason}")


# nn


class ShapeMismatch(GprForgeException):
    template = "shape mismatch: {subject}"


class BadRecordSize(GprForgeException):
    template = "file size is not a multiple of the record size: {subject}"


class LabelOutOfRange(GprForgeException):
    template = "label out of range: {subject}"


class DivergedTraining(GprForgeException):
    template = "loss became non-finite at {subject}"


class BadWeights(GprForgeException):
    template = "weights do not fit the network: {subject}"


# detect


class EmptyDataset(GprForgeException):
    template = "no labelled images found in {subject}"


class DegenerateTriple(GprForgeException):
    template = "point triple does not define a hyperbola: {subject}"


# eval


class MissingPair(GprForgeException):
    template = "no matching file for index {subject}"


class MalformedLabelLine(GprForgeException):
    template = "malformed label line in {subject}"


# cli


class OutputExists(GprForgeException):
    template = "output '{subject}' exists; pass --force to overwrite"


class FileAccessError(GprForgeException):
    template = "cannot access '{subject}'"
