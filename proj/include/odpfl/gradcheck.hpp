#pragma once

#include <ostream>

namespace odpfl {

// Central finite-difference audit of every differentiable operation and of
// the full encoder -> hypernetwork -> target -> loss composite. Prints one
// line per check; returns true when every mismatch stays within 1e-4
// relative over `instances` random instances.
bool run_gradcheck(int instances, std::ostream& out);

}  // namespace odpfl
