#pragma once

#include <functional>
#include <sstream>
#include <string>

#include <doctest.h>

#include "framesmith/error.hpp"

// Runs `fn` and returns the framesmith::Error it throws; fails the test when
// nothing (or something else) is thrown.
inline framesmith::Error expect_error(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const framesmith::Error& e) {
        return e;
    } catch (const std::exception& e) {
        FAIL("unexpected exception: " << e.what());
    }
    FAIL("expected a framesmith::Error");
    return framesmith::Error(framesmith::ErrorCode::internal, "unreachable");
}

inline std::istringstream lines(const std::string& text) { return std::istringstream(text); }
