#pragma once

// torch pulls in c10's glog-style CHECK/CHECK_* macros, which collide with
// doctest's short assertion names. Include torch first, drop the offenders,
// then let doctest define its own. Every test file includes this header
// before anything else.
#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT
#undef CHECK_NOTNULL
#undef DCHECK
#undef DCHECK_EQ
#undef DCHECK_NE
#undef DCHECK_LE
#undef DCHECK_LT
#undef DCHECK_GE
#undef DCHECK_GT

#include <doctest.h>
