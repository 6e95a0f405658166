#pragma once

#include "knowmri/methods/registry.hpp"

namespace knowmri::methods {

void register_builtin_methods(MethodRegistry& registry);

// Process-wide registry holding the builtin methods.
MethodRegistry& default_registry();

}  // namespace knowmri::methods
