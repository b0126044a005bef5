#pragma once

#include <functional>

namespace gqr {

/// Worker cap: min(requested, GQR_THREADS env, hardware concurrency).
/// requested == 0 means "no explicit request". Affects speed only;
/// every parallel loop in this project is seeded per item, so results
/// do not depend on the schedule.
int worker_count(int requested = 0);

/// Run body(0..n-1) on up to `threads` workers. Items are claimed from an
/// atomic counter; the first exception is captured and rethrown after join.
void parallel_for(int n, const std::function<void(int)>& body, int threads = 0);

}  // namespace gqr
