// Copyright 2026 The wsaed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// glibc returns every large free() to the kernel by default. Training
// allocates and drops the same multi-megabyte activations each step, so the
// resulting mmap/munmap churn costs more than the arithmetic on small
// models. Keeping freed memory in the heap removes it.

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace wsaed {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace wsaed
