#include "evidencelab/version.hpp"

namespace evidencelab {

std::string_view version() noexcept { return EVIDENCELAB_VERSION; }

}  // namespace evidencelab
