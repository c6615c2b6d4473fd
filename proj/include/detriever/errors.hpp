#pragma once

#include <stdexcept>
#include <string>

namespace detriever {

// Every failure raised by the library derives from Error. kind() is a stable
// machine-readable tag used by the CLI's one-line error output.
class Error : public std::runtime_error {
public:
    Error(const char* kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    const char* kind() const noexcept { return kind_; }

private:
    const char* kind_;
};

#define DETRIEVER_ERROR_CLASS(Name, tag)                                   \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what) : Error(tag, what) {}       \
    };

DETRIEVER_ERROR_CLASS(IoError, "io")
DETRIEVER_ERROR_CLASS(FormatError, "format")
DETRIEVER_ERROR_CLASS(UnsupportedFormatError, "unsupported_format")
DETRIEVER_ERROR_CLASS(CorruptionError, "corruption")
DETRIEVER_ERROR_CLASS(ValidationError, "validation")
DETRIEVER_ERROR_CLASS(CompatibilityError, "compatibility")
DETRIEVER_ERROR_CLASS(ShapeError, "shape")
DETRIEVER_ERROR_CLASS(ConfigError, "config")
DETRIEVER_ERROR_CLASS(ParseError, "parse")
DETRIEVER_ERROR_CLASS(NoCandidatesError, "no_candidates")
DETRIEVER_ERROR_CLASS(DataError, "data")
DETRIEVER_ERROR_CLASS(NumericError, "numeric")

#undef DETRIEVER_ERROR_CLASS

} // namespace detriever
