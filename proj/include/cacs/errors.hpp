#pragma once

#include <stdexcept>
#include <string>

namespace cacs {

/// I/O failure: file cannot be opened, read, or written.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Base class for file-format violations.
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// File does not start with the expected magic bytes.
struct bad_magic_error : format_error {
    explicit bad_magic_error(const std::string& msg) : format_error(msg) {}
};

/// Magic matched but the format version is unsupported.
struct bad_version_error : format_error {
    explicit bad_version_error(const std::string& msg) : format_error(msg) {}
};

/// Header present but malformed (bad JSON, missing or invalid keys).
struct bad_header_error : format_error {
    explicit bad_header_error(const std::string& msg) : format_error(msg) {}
};

/// Payload length disagrees with the header's declared dimensions.
struct payload_size_error : format_error {
    explicit payload_size_error(const std::string& msg) : format_error(msg) {}
};

/// Two grids that must share dimensions do not.
struct dim_mismatch_error : std::runtime_error {
    explicit dim_mismatch_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A sampling stratum required by the batch composition has no records.
struct stratum_empty_error : std::runtime_error {
    explicit stratum_empty_error(const std::string& stratum)
        : std::runtime_error("stratum exhausted: no records labeled '" + stratum + "'"),
          stratum_name(stratum) {}
    std::string stratum_name;
};

/// Non-finite value where the pipeline requires finite arithmetic.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Lesion plan cannot be realized within the phantom geometry.
struct plan_error : std::runtime_error {
    explicit plan_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cacs
