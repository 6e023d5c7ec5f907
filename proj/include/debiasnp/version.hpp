#pragma once

#define DEBIASNP_VERSION_MAJOR 0
#define DEBIASNP_VERSION_MINOR 1
#define DEBIASNP_VERSION_PATCH 0

namespace debiasnp {

inline constexpr const char* version_string() { return "0.1.0"; }

}  // namespace debiasnp
