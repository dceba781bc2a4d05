// Copyright 2026 The Vton Authors.
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

#ifndef VTON_ALLOC_HPP_
#define VTON_ALLOC_HPP_

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vton {

// Keeps freed tensor buffers in the heap instead of returning them to the
// kernel, which otherwise page-faults every large allocation again.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace vton

#endif  // VTON_ALLOC_HPP_
