#pragma once

namespace bilex {

// Overridden by the build system with a git-describe string when available.
#ifdef BILEX_GIT_VERSION
inline constexpr const char* kVersion = BILEX_GIT_VERSION;
#else
inline constexpr const char* kVersion = "v0.1.0";
#endif

}  // namespace bilex
