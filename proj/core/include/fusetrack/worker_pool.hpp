// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace fusetrack {

// Worker count: FUSETRACK_THREADS if set (>= 1), else hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is handled
// exactly once; callers write results into slot i so collection order never
// depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fusetrack
