#include "framesmith/error.hpp"

namespace framesmith {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found: return "notFound";
    case ErrorCode::validation: return "validation";
    case ErrorCode::syntax: return "syntax";
    case ErrorCode::task_mismatch: return "taskMismatch";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::internal: return "internal";
    }
    return "internal";
}

}  // namespace framesmith
