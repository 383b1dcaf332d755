#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace framesmith {

/// Stable error categories; the service maps each one to an HTTP status.
enum class ErrorCode { not_found, validation, syntax, task_mismatch, conflict, internal };

std::string_view to_string(ErrorCode code);

/// The single exception type thrown by the library. `detail` carries a
/// structured payload (byte offset, field reference, file path) when one
/// exists, and is null otherwise.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, nlohmann::json detail = nullptr)
        : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const nlohmann::json& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    nlohmann::json detail_;
};

}  // namespace framesmith
