#include "dro/version.hpp"

#ifndef DRO_VERSION_STRING
#define DRO_VERSION_STRING "unknown"
#endif

namespace dro {

const std::string& version() {
  static const std::string v = DRO_VERSION_STRING;
  return v;
}

} // namespace dro
