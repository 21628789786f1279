#pragma once

namespace dtok {

/// Reads DTOK_THREADS and caps the OpenMP worker count accordingly.
/// Unset or non-positive values leave the runtime default in place.
void configure_threads_from_env();

void set_worker_count(int n);
int worker_count();

}  // namespace dtok
