#pragma once

#include <cstdint>
#include <functional>

namespace tvm {

// Worker cap: TVM_NUM_WORKERS if set, else hardware concurrency.
int num_workers();

// Runs fn(i) for i in [0, n). Tasks must write disjoint outputs; the split is
// by contiguous chunks so results match single-threaded execution exactly.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace tvm
