#pragma once

#include <stdexcept>
#include <string>

namespace redefix {

/// Base of every exception thrown by the redefix libraries.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace redefix
