#pragma once

#include <string>

namespace dro {

// Project version plus `git describe` output captured at configure time.
const std::string& version();

} // namespace dro
