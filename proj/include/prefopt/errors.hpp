#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prefopt {

// Every library error derives from Error so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
    using Error::Error;
};

struct InvalidSpec : Error {
    using Error::Error;
};

struct InvalidConfig : Error {
    using Error::Error;
};

struct InvalidToken : Error {
    using Error::Error;
};

struct LengthError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_number(line) {}
    std::size_t line_number;
};

struct ProbeFailure : Error {
    ProbeFailure(std::size_t coord, const std::string& what)
        : Error("probe failure at coordinate " + std::to_string(coord) + ": " + what),
          coordinate(coord) {}
    std::size_t coordinate;
};

}  // namespace prefopt
