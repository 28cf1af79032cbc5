#pragma once

#include <stdexcept>
#include <string>

namespace clfno {

/// Error with a stable machine-readable code ("shape_mismatch", "io", ...)
/// in addition to the human-readable message. The CLI maps these to its
/// JSON error records.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

inline void require(bool cond, const char* code, const std::string& message) {
    if (!cond) {
        throw Error(code, message);
    }
}

} // namespace clfno
