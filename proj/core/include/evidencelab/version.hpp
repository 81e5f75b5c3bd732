#pragma once

#include <string_view>

namespace evidencelab {

std::string_view version() noexcept;

}  // namespace evidencelab
