#pragma once

// <resolv.h> (pulled in by httplib) defines a `_res` macro that collides with
// Eigen parameter names; hide it while Eigen is parsed.
#pragma push_macro("_res")
#undef _res
#include <Eigen/Dense>
#pragma pop_macro("_res")
